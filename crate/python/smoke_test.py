"""Smoke test for the `eraki` extension: phantom -> mask -> recon -> metrics -> fit."""

import json
import math
import struct
import sys
import tempfile

import eraki

CONFIG = {
    "seed": 7,
    "phantom": {"extents": [6, 24, 24], "coils": 4, "te_ms": [5.0, 15.0, 25.0]},
    "mask": {"r1": 2, "r2": 2, "acs": [14, 14]},
    "espirit": {"window": 4},
    "recon": {"grappa": {"blocks": [2, 2], "readout_taps": 3}},
    "train": {
        "architecture": {"kernels": [[3, 3, 3], [1, 1, 1]], "widths": [4]},
        "iterations": 5,
    },
}


def main():
    cfg = json.dumps(CONFIG)
    full = json.loads(eraki.effective_config(cfg))
    assert full["seed"] == 7

    ph = eraki.make_phantom_from_config(cfg)
    k = ph["kspace"]
    assert k.axes == ["coil", "echo", "kx", "ky", "kz"], k.axes
    assert k.shape == [4, 3, 6, 24, 24], k.shape

    raw = k.to_bytes()
    assert len(raw) == 16 * math.prod(k.shape)
    again = eraki.Tensor(k.axes, k.shape, raw)
    assert again.to_bytes() == raw
    re0, im0 = struct.unpack("<dd", raw[:16])
    assert math.isfinite(re0) and math.isfinite(im0)

    with tempfile.TemporaryDirectory() as d:
        k.save(f"{d}/k", json.dumps({"te_ms": [5.0, 15.0, 25.0]}))
        assert eraki.Tensor.load(f"{d}/k").to_bytes() == raw

    masks = eraki.make_masks(cfg)
    assert len(masks) == 1
    m = masks[0]
    assert m.extents == [24, 24]
    assert 1.0 < m.effective_acceleration() < m.nominal_acceleration() + 1e-12

    maps, eig = eraki.espirit_maps(k, masks, cfg)
    assert maps.shape[0] == 4

    ref = ph["reference"]
    zf = eraki.reconstruct("zerofill", k, masks, cfg)
    gr = eraki.reconstruct("grappa", k, masks, cfg)
    er = eraki.reconstruct("eraki", k, masks, cfg)
    assert er["model_count"] == 3
    assert gr["model_count"] == 0
    e_zf = eraki.nrmse(zf["images"], ref)
    e_gr = eraki.nrmse(gr["images"], ref)
    e_er = eraki.nrmse(er["images"], ref)
    print(f"nrmse zerofill {e_zf:.4f} grappa {e_gr:.4f} eraki {e_er:.4f}")
    assert e_gr < e_zf
    assert math.isfinite(e_er)
    assert eraki.psnr(gr["images"], ref) > eraki.psnr(zf["images"], ref)

    t_map, s0, r2, valid = eraki.fit_decay(ref, [5.0, 15.0, 25.0], 1e-3 * ref.max_abs())
    assert any(valid)
    assert t_map.shape == [6, 24, 24]

    try:
        eraki.reconstruct("nope", k, masks, cfg)
    except ValueError:
        pass
    else:
        raise AssertionError("unknown method accepted")
    try:
        eraki.Tensor.load("/nonexistent/x")
    except OSError:
        pass
    else:
        raise AssertionError("missing bundle loaded")

    print("smoke test ok")


if __name__ == "__main__":
    sys.exit(main())
