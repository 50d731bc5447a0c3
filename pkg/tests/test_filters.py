import numpy as np
import pytest

import nncert
from nncert.filters import FilterRealization, extend_plant, realize_filter
from nncert.model import ModelError
from nncert.multipliers import MultiplierSpec, n_r_for


FAMILY_SPECS = [
    MultiplierSpec(kind="diag-c"),
    MultiplierSpec(kind="fb-c"),
    MultiplierSpec(kind="cy"),
    MultiplierSpec(kind="zf", zf_order=(0, 1)),
    MultiplierSpec(kind="zf", zf_order=(2, 1)),
    MultiplierSpec(kind="zf", zf_order=(1, 2)),
    MultiplierSpec(kind="combined", zf_order=(1, 1), circle_part="diag"),
    MultiplierSpec(kind="combined", zf_order=(0, 1), circle_part="cy"),
    MultiplierSpec(kind="combined", zf_order=(1, 1), circle_part="full"),
]


def lagged(seq, lag):
    """seq shifted back ``lag`` steps with zero padding, matching a filter
    started from rest."""
    if lag == 0:
        return seq
    out = np.zeros_like(seq)
    out[..., lag:, :] = seq[..., :-lag, :]
    return out


def reference_rows(spec, v, w):
    """The filter output written directly in terms of the raw sequences."""
    cols = []
    if spec.has_zf:
        for seq in (v, w):
            for lag in range(spec.ell + 1):
                cols.append(lagged(seq, lag))
    if spec.kind in ("diag-c", "fb-c") or (
        spec.kind == "combined" and spec.circle_part in ("diag", "full")
    ):
        cols.append(v)
        cols.append(w)
    if spec.kind == "cy" or (
        spec.kind == "combined" and spec.circle_part == "cy"
    ):
        cols.append(v)
        cols.append(v - lagged(v, 1))
        cols.append(w)
        cols.append(w - lagged(w, 1))
    return np.concatenate(cols, axis=-1)


class TestRealizeFilter:
    @pytest.mark.parametrize(
        "spec", FAMILY_SPECS, ids=lambda s: s.describe()
    )
    def test_output_matches_lag_definition(self, spec):
        # batch of 100 random length-50 input pairs; the realized filter
        # must reproduce the lag/difference definition of every row exactly
        n = 3
        psi = realize_filter(spec, n)
        rng = np.random.default_rng(hash(spec.describe()) % 2**32)
        v = rng.standard_normal((100, 50, n))
        w = rng.standard_normal((100, 50, n))
        r = psi.simulate(v, w)
        want = reference_rows(spec, v, w)
        assert r.shape == want.shape
        np.testing.assert_allclose(r, want, atol=1e-14)

    @pytest.mark.parametrize(
        "spec", FAMILY_SPECS, ids=lambda s: s.describe()
    )
    def test_state_matrix_nilpotent(self, spec):
        psi = realize_filter(spec, 2)
        if psi.n_xi == 0:
            return
        depth = psi.n_xi // (2 * 2)
        power = np.linalg.matrix_power(psi.A, depth)
        assert np.count_nonzero(power) == 0
        if depth > 1:
            assert np.count_nonzero(
                np.linalg.matrix_power(psi.A, depth - 1)
            ) > 0

    def test_static_families_have_no_state(self):
        for kind in ("diag-c", "fb-c"):
            psi = realize_filter(MultiplierSpec(kind=kind), 4)
            assert psi.n_xi == 0
            assert psi.A.shape == (0, 0)

    def test_state_dimension_tracks_window(self):
        n = 3
        assert realize_filter(MultiplierSpec(kind="cy"), n).n_xi == 2 * n
        assert realize_filter(
            MultiplierSpec(kind="zf", zf_order=(2, 1)), n
        ).n_xi == 2 * 2 * n
        # the cy part forces at least one delay even for a memoryless window
        assert realize_filter(
            MultiplierSpec(kind="combined", zf_order=(0, 0),
                           circle_part="cy"), n
        ).n_xi == 2 * n

    @pytest.mark.parametrize(
        "spec", FAMILY_SPECS, ids=lambda s: s.describe()
    )
    def test_row_count_matches_weight(self, spec):
        n = 2
        psi = realize_filter(spec, n)
        assert psi.n_r == n_r_for(spec, n)
        assert psi.n_in == 2 * n

    def test_mismatched_inputs_rejected(self):
        psi = realize_filter(MultiplierSpec(kind="cy"), 2)
        with pytest.raises(ModelError, match="matching shapes"):
            psi.simulate(np.zeros((5, 2)), np.zeros((6, 2)))


class TestFilterRealizationValidation:
    def test_bad_shapes_rejected(self):
        eye = np.eye(2)
        with pytest.raises(ModelError, match="square"):
            FilterRealization(A=np.zeros((2, 3)), B=eye, C=eye, D=eye)
        with pytest.raises(ModelError, match="B row count"):
            FilterRealization(A=eye, B=np.zeros((3, 2)), C=eye, D=eye)
        with pytest.raises(ModelError, match="C column count"):
            FilterRealization(A=eye, B=eye, C=np.zeros((2, 3)), D=eye)
        with pytest.raises(ModelError, match="D shape"):
            FilterRealization(A=eye, B=eye, C=eye, D=np.zeros((3, 3)))


class TestExtendPlant:
    def test_substitution_reproduces_true_trajectories(self, loop):
        # drive the linear extension with the w recorded from the true
        # nonlinear rollout; states and filter outputs must coincide
        spec = MultiplierSpec(kind="combined", zf_order=(1, 1),
                              circle_part="cy")
        psi = realize_filter(spec, loop.n)
        ext = extend_plant(loop, psi)
        rng = np.random.default_rng(3)
        x = rng.uniform(-0.3, 0.3, loop.plant.n_x)
        steps = 30
        vs, ws = [], []
        xs = [x]
        for _ in range(steps):
            u_t, v_t, w_t = loop.forward_shifted(x)
            vs.append(v_t)
            ws.append(w_t)
            x = loop.plant.A @ x + loop.plant.B @ u_t
            xs.append(x)
        v_seq = np.array(vs)
        w_seq = np.array(ws)

        eta = np.concatenate([xs[0], np.zeros(ext.n_xi)])
        r_lin = []
        for k in range(steps):
            r_lin.append(ext.C_tot @ eta + ext.D_tot @ w_seq[k])
            eta = ext.A_tot @ eta + ext.B_tot @ w_seq[k]
            np.testing.assert_allclose(
                eta[: ext.n_x], xs[k + 1], atol=1e-12
            )
        np.testing.assert_allclose(
            np.array(r_lin), psi.simulate(v_seq, w_seq), atol=1e-12
        )

    def test_dimensions(self, loop):
        spec = MultiplierSpec(kind="zf", zf_order=(1, 1))
        psi = realize_filter(spec, loop.n)
        ext = extend_plant(loop, psi)
        assert ext.n_eta == loop.plant.n_x + psi.n_xi
        assert ext.A_tot.shape == (ext.n_eta, ext.n_eta)
        assert ext.B_tot.shape == (ext.n_eta, loop.n)
        assert ext.C_tot.shape == (psi.n_r, ext.n_eta)
        assert ext.D_tot.shape == (psi.n_r, loop.n)

    def test_wrong_width_rejected(self, loop):
        psi = realize_filter(MultiplierSpec(kind="diag-c"), loop.n + 1)
        with pytest.raises(ModelError, match="input dimension"):
            extend_plant(loop, psi)

    def test_linearization_is_stable_for_toy(self, loop):
        # sanity on the fixture: the extended state matrix inherits the
        # closed loop's spectral radius padded with filter zeros
        spec = MultiplierSpec(kind="zf", zf_order=(1, 1))
        psi = realize_filter(spec, loop.n)
        ext = extend_plant(loop, psi)
        J = loop.phi_deriv(np.zeros(loop.n))
        A_cl = loop.plant.A + loop.plant.B @ ext_closed_gain(loop, J)
        eigs_cl = np.abs(np.linalg.eigvals(A_cl))
        assert eigs_cl.max() < 1.0


def ext_closed_gain(loop, J):
    """Input-to-state gain of the linearized hidden stack at the origin."""
    n_x = loop.plant.n_x
    G = np.zeros((loop.n, n_x))
    z = loop.plant.C
    for slc, layer in zip(loop.layer_slices, loop.nn.layers):
        G[slc] = J[slc, None] * (layer.W @ z)
        z = G[slc]
    return loop.R_u @ G
