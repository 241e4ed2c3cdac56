import numpy as np
import pytest

from eqtrans import autodiff as ad
from eqtrans.autodiff import Tensor
from eqtrans.groups import CyclicShiftGroup, TokenAction, act_on_token
from eqtrans.layers import TranslatorModel, embed_index, g_conv, g_decode, g_decode_all, g_embed
from eqtrans.scan import builtin_lexicon

CMAPS = {4: builtin_lexicon("verb")[2], 2: builtin_lexicon("direction")[2]}


def shift_rows(f, h, p):
    """(L_h f)[g] = f[g - h] along the group axis (-2)."""
    return f[..., [(g - h) % p for g in range(p)], :]


def conv_oracle(f, psi):
    D, p, K = psi.shape
    out = np.zeros((p, D))
    for g in range(p):
        for d in range(D):
            out[g, d] = sum(f[h, k] * psi[d, (h - g) % p, k] for h in range(p) for k in range(K))
    return out


def decode_oracle(phi, rho, action, group):
    Y, D = rho.shape
    p = group.order
    out = np.zeros(Y)
    for y in range(Y):
        for h in range(p):
            src = act_on_token(group.element(-h), action, y)
            out[y] += phi[h] @ rho[src]
    return out


@pytest.mark.parametrize("p", [1, 2, 3, 4])
def test_g_conv_matches_double_loop(p):
    rng = np.random.default_rng(p)
    G = CyclicShiftGroup(p)
    with ad.precision("f64"):
        f, psi = rng.normal(size=(p, 3)), rng.normal(size=(2, p, 3))
        np.testing.assert_allclose(g_conv(Tensor(f), Tensor(psi), G).data, conv_oracle(f, psi), rtol=1e-12, atol=1e-13)


def test_g_decode_matches_loop():
    rng = np.random.default_rng(0)
    G = CyclicShiftGroup(3)
    action = TokenAction(G, (1, 3, 4))
    with ad.precision("f64"):
        phi, rho = rng.normal(size=(3, 2)), rng.normal(size=(6, 2))
        got = g_decode_all(Tensor(phi), Tensor(rho), G, action).data
        np.testing.assert_allclose(got, decode_oracle(phi, rho, action, G), rtol=1e-12)
        assert g_decode(Tensor(phi), Tensor(rho), G, action, 4).item() == pytest.approx(got[4], rel=1e-14)
        with pytest.raises(ValueError):
            g_decode(Tensor(phi), Tensor(rho), G, action, 6)


def test_embed_index_values():
    G = CyclicShiftGroup(4)
    action = TokenAction(G, (5, 6, 7, 8))
    idx = embed_index(G, action, 10)
    assert idx[5].tolist() == [5, 8, 7, 6]  # g^-1 applied to token 5 for g = 0..3
    assert idx[0].tolist() == [0, 0, 0, 0]


def test_shape_errors():
    G = CyclicShiftGroup(2)
    with pytest.raises(ad.ShapeError):
        g_conv(Tensor(np.zeros((3, 2))), Tensor(np.zeros((1, 2, 2))), G)
    with pytest.raises(ad.ShapeError):
        g_decode_all(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))), G, TokenAction(G, (0, 1)))


@pytest.mark.parametrize("p", [2, 4])
def test_layer_equivariance(p):
    cmap = CMAPS[p]
    rng = np.random.default_rng(10 + p)
    with ad.precision("f64"):
        for draw in range(10):
            m = TranslatorModel(cmap, K=3, D=2, rng=rng)
            ain, aout = m.in_action, m.out_action
            for h in cmap.group:
                for x in range(m.n_in):
                    hx = act_on_token(h, ain, x)
                    e, ehx = m.embed([x]).data[0], m.embed([hx]).data[0]
                    np.testing.assert_allclose(ehx, shift_rows(e, h.shift, p), rtol=0, atol=1e-12)
                f = rng.normal(size=(p, 3))
                lhs = g_conv(Tensor(shift_rows(f, h.shift, p)), m.psi, m.group).data
                rhs = shift_rows(g_conv(Tensor(f), m.psi, m.group).data, h.shift, p)
                np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-12)
                phi = rng.normal(size=(p, 2))
                moved = g_decode_all(Tensor(shift_rows(phi, h.shift, p)), m.rho, m.group, aout).data
                base = g_decode_all(Tensor(phi), m.rho, m.group, aout).data
                for y in range(m.n_out):
                    assert abs(moved[act_on_token(h, aout, y)] - base[y]) <= 1e-12


@pytest.mark.parametrize("p", [2, 4])
def test_translator_equivariance(p):
    cmap = CMAPS[p]
    with ad.precision("f64"):
        m = TranslatorModel(cmap, K=5, D=3, rng=np.random.default_rng(p))
        T = m.table().data
        for h in cmap.group:
            for x in range(m.n_in):
                for y in range(m.n_out):
                    a, b = T[x, y], T[act_on_token(h, m.in_action, x), act_on_token(h, m.out_action, y)]
                    assert abs(a - b) <= 1e-9 * abs(a)
        assert np.allclose(np.exp(T).sum(axis=1), 1.0)


def test_plain_embedding_breaks_equivariance():
    cmap = CMAPS[4]
    with ad.precision("f64"):
        m = TranslatorModel(cmap, K=5, D=3, rng=np.random.default_rng(0), equivariant_embed=False)
        T = m.table().data
        walk, jump = cmap.source.index("walk"), cmap.source.index("jump")
        WALK, JUMP = cmap.target.index("WALK"), cmap.target.index("JUMP")
        assert abs(T[walk, WALK] - T[jump, JUMP]) > 1e-6


def test_parameter_shapes():
    cmap = CMAPS[4]
    m = TranslatorModel(cmap, K=7, D=5, rng=np.random.default_rng(0))
    assert m.omega.shape == (7, 14) and m.psi.shape == (5, 4, 7) and m.rho.shape == (7, 5)
    assert m.table().shape == (14, 7)
