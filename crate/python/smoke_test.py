"""Smoke test for the Python bindings. Build first with `maturin develop`."""

import math

import dirac_afem_py as da


def main():
    mesh = da.Mesh.domain("unit_square")
    assert mesh.dim == 2
    assert abs(mesh.total_volume() - 1.0) < 1e-14
    fine = mesh.uniform_refine()
    assert fine.n_elements == 2 * mesh.n_elements

    preset = da.Preset("example2")
    seed = preset.seed_mesh()
    sol = preset.solve(seed)
    assert sol.vi_residual() < 1e-8
    est = sol.estimate()
    assert len(est["combined"]) == seed.n_elements
    assert est["eocp"] > 0.0
    errs = sol.exact_errors()
    assert errs is not None and errs["err_total"] > 0.0

    records = preset.run(max_ndof=3000)
    assert records[0]["iter"] == 0
    assert records[-1]["eocp"] < records[0]["eocp"]

    ndof = [float(r["ndof"]) for r in records]
    slope = da.fit_rate(ndof, [r["eocp"] for r in records], 3)
    assert math.isfinite(slope)
    assert da.mark([0.0, 1.0, 0.6, 0.2], 0.5) == [1, 2]

    try:
        da.Preset("example9")
    except da.AfemError:
        pass
    else:
        raise AssertionError("unknown preset accepted")

    print(f"ok: {len(records)} iterations, final ndof {records[-1]['ndof']}, eocp slope {slope:.3f}")


if __name__ == "__main__":
    main()
