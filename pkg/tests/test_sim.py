import numpy as np
import pytest

import nncert
from nncert.multipliers import MultiplierSpec, sample_valuation
from nncert.roa import Certificate
from nncert.sim import (
    DIVERGENCE_LIMIT,
    _static_nonlinearities,
    empirical_hard_iqc,
    sample_ellipsoid,
    simulate,
    simulate_extended,
    validate_certificate,
)

from conftest import toy_network, toy_plant


def unstable_model():
    plant = nncert.PlantModel(
        A=np.array([[1.2]]), B=np.array([[1.0]]), C=np.eye(1)
    )
    nn = nncert.NeuralNetwork(
        layers=(nncert.Layer(W=np.array([[1.0]]), b=np.zeros(1),
                             activation="tanh"),),
        W_out=np.array([[0.0]]), b_out=np.zeros(1),
    )
    return plant, nn


class TestSimulate:
    def test_matches_stepwise_oracle(self, plant, network):
        x0 = np.array([0.2, -0.3])
        traj = simulate(plant, network, x0, 25)
        x = x0.copy()
        for k in range(25):
            u, _, _ = network.forward(plant.C @ x)
            np.testing.assert_allclose(traj.u[k], u, atol=1e-14)
            x = plant.A @ x + plant.B @ u
            np.testing.assert_allclose(traj.x[k + 1], x, atol=1e-14)
        assert not traj.diverged

    def test_batched_matches_rowwise(self, plant, network):
        rng = np.random.default_rng(0)
        x0 = rng.uniform(-0.5, 0.5, (4, 2))
        batch = simulate(plant, network, x0, 10)
        assert batch.x.shape == (4, 11, 2)
        assert batch.u.shape == (4, 10, 1)
        for i in range(4):
            single = simulate(plant, network, x0[i], 10)
            np.testing.assert_allclose(batch.x[i], single.x, atol=1e-14)
            np.testing.assert_allclose(batch.u[i], single.u, atol=1e-14)

    def test_wrong_state_size(self, plant, network):
        with pytest.raises(ValueError, match="trailing size 2"):
            simulate(plant, network, np.zeros(3), 5)

    def test_divergence_freezes_state(self):
        plant, nn = unstable_model()
        traj = simulate(plant, nn, np.array([1.0]), 200)
        assert traj.diverged
        # the recorded path freezes at the last pre-limit state: bounded
        # record, constant tail
        assert np.abs(traj.x).max() <= DIVERGENCE_LIMIT
        repeats = np.flatnonzero(np.all(traj.x[1:] == traj.x[:-1], axis=-1))
        assert repeats.size > 0
        f = int(repeats[0])
        assert f > 100  # grows for a while before tripping the limit
        assert (traj.x[f + 1 :] == traj.x[f]).all()
        # up to the freeze the path grows geometrically
        np.testing.assert_allclose(traj.x[:f, 0], 1.2 ** np.arange(f),
                                   rtol=1e-12)

    def test_divergence_is_per_trajectory(self):
        plant, nn = unstable_model()
        x0 = np.array([[1.0], [0.0]])  # the zero start stays at zero
        traj = simulate(plant, nn, x0, 200)
        assert traj.diverged.tolist() == [True, False]
        np.testing.assert_allclose(traj.x[1], 0.0, atol=0.0)


class TestSimulateExtended:
    def test_consistent_with_plain_rollout(self, loop, plant, network):
        spec = MultiplierSpec(kind="combined", zf_order=(1, 1),
                              circle_part="cy")
        psi = nncert.realize_filter(spec, loop.n)
        x_t0 = np.array([0.15, -0.2])
        steps = 20
        eta, r = simulate_extended(loop, psi, x_t0, steps)
        assert eta.shape == (steps + 1, 2 + psi.n_xi)
        assert r.shape == (steps, psi.n_r)
        # filter starts at rest
        np.testing.assert_allclose(eta[0, 2:], 0.0, atol=0.0)
        # the plant block reproduces the unshifted rollout exactly
        # (toy steady state is the origin)
        traj = simulate(plant, network, x_t0, steps)
        np.testing.assert_allclose(eta[:, :2], traj.x, atol=1e-12)
        # the filter output is the filter run over the recorded signals
        vs, ws = [], []
        x = x_t0
        for _ in range(steps):
            u_t, v_t, w_t = loop.forward_shifted(x)
            vs.append(v_t)
            ws.append(w_t)
            x = plant.A @ x + plant.B @ u_t
        np.testing.assert_allclose(
            r, psi.simulate(np.array(vs), np.array(ws)), atol=1e-12
        )

    def test_batched(self, loop):
        psi = nncert.realize_filter(MultiplierSpec(kind="diag-c"), loop.n)
        x0 = np.random.default_rng(1).uniform(-0.2, 0.2, (6, 2))
        eta, r = simulate_extended(loop, psi, x0, 8)
        assert eta.shape == (6, 9, 2)
        assert r.shape == (6, 8, 2 * loop.n)

    def test_wrong_state_size(self, loop):
        psi = nncert.realize_filter(MultiplierSpec(kind="diag-c"), loop.n)
        with pytest.raises(ValueError, match="trailing size"):
            simulate_extended(loop, psi, np.zeros(5), 3)


class TestSampleEllipsoid:
    X = np.array([[4.0, 1.0], [1.0, 2.0]])
    center = np.array([1.0, -1.0])

    def quad(self, pts):
        d = pts - self.center
        return np.einsum("si,ij,sj->s", d, self.X, d)

    def test_interior_membership(self):
        pts = sample_ellipsoid(self.X, self.center, 2000, rng=0)
        q = self.quad(pts)
        assert q.max() <= 1.0 + 1e-12
        assert q.min() >= 0.0

    def test_boundary_shell(self):
        pts = sample_ellipsoid(self.X, self.center, 500, rng=1,
                               boundary=True)
        np.testing.assert_allclose(self.quad(pts), 1.0, atol=1e-12)

    def test_uniform_in_volume(self):
        # in 2 dimensions a quarter of the mass lies inside half the radius
        pts = sample_ellipsoid(self.X, self.center, 8000, rng=2)
        frac = float(np.mean(self.quad(pts) <= 0.25))
        assert frac == pytest.approx(0.25, abs=0.03)

    def test_reproducible(self):
        a = sample_ellipsoid(self.X, self.center, 50, rng=7)
        b = sample_ellipsoid(self.X, self.center, 50, rng=7)
        np.testing.assert_array_equal(a, b)


class TestValidateCertificate:
    def test_toy_certificate_passes(self, plant, network, toy_certificate):
        report = validate_certificate(
            plant, network, toy_certificate, n_samples=200, steps=400,
            seed=0,
        )
        assert report.passed, report.summary()
        assert report.n_diverged == 0
        assert report.n_not_converged == 0
        assert report.max_final_norm <= 1e-6
        assert report.max_peak_ratio <= 1.0 + 1e-9
        assert report.max_dissipation <= 1e-7
        assert report.summary().startswith("PASS")

    def test_boundary_sampling(self, plant, network, toy_certificate):
        report = validate_certificate(
            plant, network, toy_certificate, n_samples=64, steps=400,
            seed=1, boundary=True,
        )
        assert report.passed, report.summary()

    def test_forged_certificate_fails(self):
        # hand-built "certificate" for an unstable loop: every trajectory
        # diverges and the report says so
        plant, nn = unstable_model()
        spec = MultiplierSpec(kind="diag-c")
        val = nncert.MultiplierValuation(
            spec=spec, n=1, P=np.zeros((2, 2)), components={"lambda": np.zeros(1)},
        )
        fake = Certificate(
            delta=2.0,
            d1=np.array([2.0]),
            X=np.eye(1),
            x_star=np.zeros(1),
            multiplier=val,
            provenance={},
        )
        report = validate_certificate(
            plant, nn, fake, n_samples=32, steps=300, seed=0
        )
        assert not report.passed
        # the rollout stops once the fastest sample crosses the limit, so
        # at least that one is flagged diverged and the rest unconverged
        assert report.n_diverged >= 1
        assert report.n_diverged + report.n_not_converged == 32
        assert any("diverged" in v for v in report.violations)
        assert any("peak bound" in v for v in report.violations)
        assert report.summary().startswith("FAIL")


@pytest.fixture(scope="module")
def iqc_setup():
    plant = toy_plant()
    nn = toy_network()
    ss = nncert.find_steady_state(plant, nn)
    loop = nncert.shift_loop(plant, nn, ss)
    boxes = nncert.propagate_boxes(loop, 0.4 * np.ones(3))
    return nncert.local_bounds(loop, boxes), nn.widths


IQC_SPECS = [
    MultiplierSpec(kind="diag-c"),
    MultiplierSpec(kind="fb-c"),
    MultiplierSpec(kind="cy"),
    MultiplierSpec(kind="zf", zf_order=(1, 1)),
    MultiplierSpec(kind="zf", zf_order=(1, 1), zf_structure="full",
                   odd=True),
    MultiplierSpec(kind="combined", zf_order=(1, 1), circle_part="diag"),
]


class TestEmpiricalIqc:
    @pytest.mark.parametrize("spec", IQC_SPECS, ids=lambda s: s.describe())
    def test_members_pass_on_their_class(self, spec, iqc_setup):
        bounds, widths = iqc_setup
        val = sample_valuation(spec, bounds, widths, rng=0)
        res = empirical_hard_iqc(val, bounds, n_signals=60, horizon=40,
                                 seed=0)
        # solver-sampled members sit at the cone boundary; grant solve slack
        assert res.passed(tol=1e-6), (spec.describe(), res.min_normalized)
        assert res.n_signals == 60 and res.horizon == 40
        assert 0 <= res.worst_signal < 60

    def test_auto_mode_mapping(self, iqc_setup):
        bounds, widths = iqc_setup
        pairs = [
            (MultiplierSpec(kind="diag-c"), "sector"),
            (MultiplierSpec(kind="fb-c"), "sector"),
            (MultiplierSpec(kind="cy"), "blend"),
            (MultiplierSpec(kind="zf", zf_order=(1, 1)), "slope"),
            (
                MultiplierSpec(kind="combined", zf_order=(1, 1),
                               circle_part="diag"),
                "blend",
            ),
        ]
        for spec, want in pairs:
            val = sample_valuation(spec, bounds, widths, rng=1)
            res = empirical_hard_iqc(val, bounds, n_signals=4, horizon=10,
                                     seed=0)
            assert res.mode == want, spec.kind

    def test_violating_signals_fail(self, iqc_setup):
        bounds, widths = iqc_setup
        val = sample_valuation(MultiplierSpec(kind="diag-c"), bounds,
                               widths, rng=2)
        res = empirical_hard_iqc(val, bounds, n_signals=60, horizon=40,
                                 seed=0, mode="violate")
        assert not res.passed()
        assert res.min_normalized < -1e-3

    def test_unknown_mode(self, iqc_setup):
        bounds, widths = iqc_setup
        val = sample_valuation(MultiplierSpec(kind="diag-c"), bounds,
                               widths, rng=0)
        with pytest.raises(ValueError, match="unknown signal mode"):
            empirical_hard_iqc(val, bounds, mode="chaos")

    def test_deterministic_given_seed(self, iqc_setup):
        bounds, widths = iqc_setup
        val = sample_valuation(MultiplierSpec(kind="zf", zf_order=(1, 1)),
                               bounds, widths, rng=3)
        a = empirical_hard_iqc(val, bounds, n_signals=20, horizon=30, seed=5)
        b = empirical_hard_iqc(val, bounds, n_signals=20, horizon=30, seed=5)
        assert a == b


class TestStaticNonlinearities:
    def grids(self, odd, n=3, n_signals=40):
        bounds = nncert.SectorSlopeBounds(
            alpha=0.2 * np.ones(n), beta=0.8 * np.ones(n),
            mu=0.1 * np.ones(n), nu=0.9 * np.ones(n),
        )
        rng = np.random.default_rng(0)
        t, phi = _static_nonlinearities(rng, bounds, n_signals, odd)
        return bounds, t, phi

    @pytest.mark.parametrize("odd", [False, True])
    def test_slopes_inside_declared_range(self, odd):
        bounds, t, phi = self.grids(odd)
        slopes = np.diff(phi, axis=2) / np.diff(t)
        assert slopes.min() >= bounds.mu.min() - 1e-12
        assert slopes.max() <= bounds.nu.max() + 1e-12

    @pytest.mark.parametrize("odd", [False, True])
    def test_zero_maps_to_zero(self, odd):
        _, t, phi = self.grids(odd)
        k0 = int(np.argmin(np.abs(t)))
        assert t[k0] == 0.0
        np.testing.assert_allclose(phi[:, :, k0], 0.0, atol=0.0)

    def test_odd_symmetry(self):
        _, t, phi = self.grids(odd=True)
        np.testing.assert_allclose(t, -t[::-1], atol=0.0)
        np.testing.assert_allclose(phi, -phi[:, :, ::-1], atol=1e-15)

    def test_non_odd_halves_differ(self):
        _, t, phi = self.grids(odd=False)
        assert np.abs(phi + phi[:, :, ::-1]).max() > 1e-3
