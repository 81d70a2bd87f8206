import hashlib

import numpy as np
import pytest

from sponet.dataset import (HEADER_BYTES, DataError, DatasetFile, generate_dataset, read_dataset,
                            sample_gp_source, se_kernel, solve_poisson, write_dataset)
from sponet.fespace import FeFunction, interpolate, l2_error_exact
from sponet.spon import bc_preset, poisson_top_data

from conftest import space



def mms_errors(deg, ns):
    errs = []
    for n in ns:
        s = space(n, deg)
        u = solve_poisson(s, lambda x, y: 2 * np.pi**2 * np.sin(np.pi * x) * np.sin(np.pi * y),
                          bc_preset("homogeneous", s))
        errs.append(l2_error_exact(u, lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y)))
    return np.array(errs)


def test_gp_determinism_and_limit():
    s = space(8)
    a = sample_gp_source(s, 0.4, (3, 1))
    b = sample_gp_source(s, 0.4, (3, 1))
    assert np.array_equal(a.dofs, b.dofs)
    assert not np.array_equal(a.dofs, sample_gp_source(s, 0.4, (3, 2)).dofs)
    flat = sample_gp_source(s, 1e6, 0).dofs
    assert flat.std() <= 1e-3 * abs(flat.mean())
    with pytest.raises(ValueError):
        sample_gp_source(s, 0.0, 0)


def test_gp_covariance_monte_carlo():
    s = space(4)
    i, j = 6, 18
    k = se_kernel(s.dof_coords, 0.4)
    draws = np.array([sample_gp_source(s, 0.4, (11, n)).dofs[[i, j]] for n in range(2000)])
    emp = np.mean(draws[:, 0] * draws[:, 1])
    se = np.sqrt((k[i, i] * k[j, j] + k[i, j] ** 2) / len(draws))
    assert abs(emp - k[i, j]) <= 3 * se
    var_i = np.mean(draws[:, 0] ** 2)
    assert abs(var_i - 1.0) <= 3 * np.sqrt(2 / len(draws))


def test_solver_trivial_and_bc():
    s = space(8)
    u = solve_poisson(s, lambda x, y: 0 * x, bc_preset("homogeneous", s))
    assert np.array_equal(u.dofs, np.zeros(s.dim))
    f = sample_gp_source(s, 0.4, 0)
    u = solve_poisson(s, f, bc_preset("poisson", s))
    top = s.boundary_dofs["top"]
    assert np.array_equal(u.dofs[top], poisson_top_data(s.dof_coords[top, 0], 1.0))


def test_solver_residual():
    from sponet.fespace import assemble_load, assemble_stiffness
    s = space(16, 2)
    bcs = bc_preset("poisson", s)
    f = sample_gp_source(s, 0.4, 5)
    u = solve_poisson(s, f, bcs)
    k = assemble_stiffness(s).toarray()
    b = assemble_load(s, f)
    bnd = np.unique(np.concatenate(list(s.boundary_dofs.values())))
    free = np.setdiff1d(np.arange(s.dim), bnd)
    r = (k @ u.dofs - b)[free]
    assert np.linalg.norm(r) <= 1e-10 * np.linalg.norm(b[free] - k[np.ix_(free, bnd)] @ u.dofs[bnd])


@pytest.mark.parametrize("deg,lo,hi", [(1, 1.75, 2.25), (2, 2.65, 3.35)])
def test_manufactured_rates(deg, lo, hi):
    errs = mms_errors(deg, [8, 16, 32, 64])
    rates = np.log2(errs[:-1] / errs[1:])
    print("degree", deg, "errors", errs, "rates", rates)
    assert np.all((rates >= lo) & (rates <= hi))


def test_file_layout_and_roundtrip(tmp_path):
    d = generate_dataset(8, 1, (8, 2, 2), 0)
    raw = d.to_bytes()
    assert len(raw) - HEADER_BYTES == 2 * 12 * 81 * 8
    assert raw[:8] == b"SPONDS1\x00"
    # first payload value is sample 0's first source DoF
    assert np.frombuffer(raw[HEADER_BYTES:HEADER_BYTES + 8], "<f8")[0] == d.f[0, 0]
    assert np.frombuffer(raw[HEADER_BYTES + 81 * 8:HEADER_BYTES + 82 * 8], "<f8")[0] == d.u[0, 0]
    p = tmp_path / "d.bin"
    write_dataset(d, p)
    back = read_dataset(p)
    assert back.counts == (8, 2, 2) and back.n_x == 8 and back.length_scale == 0.4
    assert np.array_equal(back.f, d.f) and np.array_equal(back.u, d.u)
    again = generate_dataset(8, 1, (8, 2, 2), 0).to_bytes()
    assert hashlib.sha256(again).digest() == hashlib.sha256(raw).digest()


def test_splits_and_nondegenerate():
    d = generate_dataset(8, 1, (6, 3, 2), 1)
    f_tr, _ = d.split("train")
    f_te, u_te = d.split("test")
    assert len(f_tr) == 6 and len(f_te) == 2
    assert list(d.split_range("val")) == [6, 7, 8]
    assert np.mean(np.linalg.norm(d.u, axis=1)) > 0
    # sample index 7 is reproducible on its own
    s = d.space()
    assert np.array_equal(sample_gp_source(s, 0.4, (1, 7)).dofs, d.f[7])


def test_corrupt_files(tmp_path):
    p = tmp_path / "bad.bin"
    p.write_bytes(b"nope")
    with pytest.raises(DataError):
        read_dataset(p)
    raw = generate_dataset(4, 1, (1, 0, 1), 0).to_bytes()
    p.write_bytes(raw[:-8])
    with pytest.raises(DataError):
        read_dataset(p)
    with pytest.raises(DataError):
        read_dataset(tmp_path / "missing.bin")
    with pytest.raises(DataError):
        DatasetFile(4, 1, (2, 0, 0), 0.4, 0, np.zeros((1, 25)), np.zeros((1, 25)))
