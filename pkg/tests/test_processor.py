import numpy as np
import pytest

from sponet import diffcore as dc
from sponet.diffcore import Tensor, gradcheck
from sponet.processor import MgProcessor, PsiModel, mg_forward, psi_forward, space_hierarchy
from sponet.transfer import build_interpolation

from conftest import space


def zero_stacks(model):
    for name, p in model.named_parameters():
        if "stacks" in name or "stack_" in name:
            p.data[...] = 0.0


def test_psi_zero_input():
    m = PsiModel(space(4), space(4), np.random.default_rng(0), k=5)
    assert np.array_equal(psi_forward(m, Tensor(np.zeros((2, 25, 1)))).data, np.zeros((2, 25, 1)))


def test_psi_zero_mp_is_low_rank_product(rng):
    s = space(4)
    m = PsiModel(s, s, rng, k=5)
    zero_stacks(m)
    f = rng.standard_normal((3, s.dim, 1))
    ref = np.einsum("ij,bjc->bic", m.w_out.dense() @ m.w_in.dense(), f)
    assert np.abs(psi_forward(m, Tensor(f)).data - ref).max() <= 1e-12


def test_psi_between_spaces(rng):
    u, v = space(3), space(3, 2)
    m = PsiModel(u, v, rng, k=2)
    zero_stacks(m)
    f = rng.standard_normal((2, u.dim, 1))
    i = build_interpolation(u, v).toarray()
    ref = np.einsum("ij,bjc->bic", m.w_out.dense() @ i @ m.w_in.dense(), f)
    assert np.abs(m(Tensor(f)).data - ref).max() <= 1e-12
    with pytest.raises(ValueError):
        m(Tensor(np.zeros((1, v.dim, 1))))


def test_psi_gradient(rng):
    s = space(4)
    m = PsiModel(s, s, rng, k=5)
    f = Tensor(rng.standard_normal((2, s.dim, 1)))
    w = Tensor(rng.standard_normal((2, s.dim, 1)))
    err, _, _ = gradcheck(lambda: dc.reduce_sum(dc.mul(m(f), w)), m.parameters(), n_coords=30)
    assert err <= 1e-4


def test_hierarchy_and_width():
    spaces = space_hierarchy(16, 3, 1)
    assert [s.n_x for s in spaces] == [16, 8, 4]
    mg = MgProcessor(spaces, spaces, np.random.default_rng(0))
    assert mg(Tensor(np.zeros((1, 289, 1)))).shape == (1, 289, 1)
    with pytest.raises(ValueError):
        MgProcessor(spaces[:1], spaces[:1], np.random.default_rng(0))
    with pytest.raises(ValueError):
        space_hierarchy(6, 3, 1)


def test_mg_zero_params_dense_oracle(rng):
    spaces = space_hierarchy(8, 3, 1)
    mg = MgProcessor(spaces, spaces, rng, k=1)
    zero_stacks(mg)
    t = mg.transfers
    r = [m.toarray() for m in t.restrictions]
    p = [m.toarray() for m in t.prolongations]
    psi = mg.psi.w_out.dense() @ mg.psi.w_in.dense()
    f = rng.standard_normal(spaces[0].dim)
    # identity stacks: down states are the successive restrictions
    d0 = f
    d1 = r[0] @ d0
    z2 = psi @ (r[1] @ d1)
    z1 = 0.5 * d1 + 0.5 * (p[1] @ z2)
    z0 = 0.5 * d0 + 0.5 * (p[0] @ z1)
    out = mg_forward(mg, Tensor(f[None, :, None])).data[0, :, 0]
    assert np.abs(out - z0).max() <= 1e-11


def test_mg_shared_stacks_and_params():
    spaces = space_hierarchy(8, 3, 1)
    mg = MgProcessor(spaces, spaces, np.random.default_rng(0), k=1)
    assert all(s is None for s in mg.up_stacks)
    names = [n for n, _ in mg.named_parameters()]
    assert len(names) == len(set(names))
    assert sum(n.startswith("aggregators") for n in names) == 6


def test_mg_gradient_all_groups(rng):
    spaces = space_hierarchy(8, 3, 1)
    mg = MgProcessor(spaces, spaces, rng, k=1)
    f = Tensor(rng.standard_normal((2, spaces[0].dim, 1)))
    w = Tensor(rng.standard_normal((2, spaces[0].dim, 1)))
    err, a, _ = gradcheck(lambda: dc.reduce_sum(dc.mul(mg(f), w)), mg.parameters(), n_coords=40)
    assert len(a) >= 40
    assert err <= 1e-4


def test_batch_independence(rng):
    spaces = space_hierarchy(8, 3, 1)
    mg = MgProcessor(spaces, spaces, rng, k=1)
    f = rng.standard_normal((2, spaces[0].dim, 1))
    one = mg(Tensor(f)).data
    two = mg(Tensor(np.concatenate([f, f]))).data
    assert np.array_equal(two[:2], one) and np.array_equal(two[2:], one)
