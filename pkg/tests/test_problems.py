"""PDE instances: exact solutions, forcing, residual operators, gPINN."""

import itertools

import numpy as np
import pytest

from jetpinn import tape
from jetpinn.estimators import sample_probes
from jetpinn.network import init_params
from jetpinn.problems import (
    ResidualValue,
    biharmonic_from_lines,
    exact_direction_eval,
    exact_line_eval,
    exact_solution_circuit,
    exact_value,
    exact_value_grad_lap,
    forcing_eval,
    forcing_gradient,
    fourth_order_directions,
    gpinn_penalty,
    gpinn_penalty_batch,
    laplacian_from_lines,
    make_instance,
    network_direction_eval,
    network_line_eval,
    residual_coordinate_batch,
    residual_full,
    residual_full_batch,
    residual_hte,
    residual_hte_batch,
    residual_sdgd,
)
from jetpinn.trainer import sample_domain_points


def wrapped_eval(instance, params):
    el = network_line_eval(instance, params)
    return lambda P: el(P, np.zeros_like(P), 0).coeffs[0].value


def fd_laplacian(f, X, h=1e-5):
    d = X.shape[1]
    out = -2 * d * f(X)
    for k in range(d):
        e = np.zeros(d)
        e[k] = h
        out += f(X + e) + f(X - e)
    return out / h**2


class TestInstances:
    def test_defaults(self):
        sg = make_instance("sine_gordon", 8)
        assert sg.solution == "two_body"
        assert sg.domain.kind == "unit_ball"
        assert sg.n_terms == 7
        bi = make_instance("biharmonic", 8)
        assert bi.solution == "three_body"
        assert bi.domain.kind == "annulus_1_2"
        assert bi.n_terms == 6

    def test_coeffs_seeded(self):
        a = make_instance("sine_gordon", 6, coeff_seed=4)
        b = make_instance("sine_gordon", 6, coeff_seed=4)
        np.testing.assert_array_equal(a.coeffs, b.coeffs)
        c = make_instance("sine_gordon", 6, coeff_seed=5)
        assert not np.array_equal(a.coeffs, c.coeffs)

    def test_validation(self):
        with pytest.raises(ValueError):
            make_instance("heat", 5)
        with pytest.raises(ValueError):
            make_instance("sine_gordon", 1)
        with pytest.raises(ValueError):
            make_instance("sine_gordon", 3, solution="three_body_chain")
        with pytest.raises(ValueError):
            make_instance("biharmonic", 5, diffusion=np.eye(5))
        with pytest.raises(ValueError):
            make_instance("sine_gordon", 5, diffusion=np.eye(4))

    def test_descriptor(self):
        inst = make_instance("sine_gordon", 5, coeff_seed=2)
        desc = inst.descriptor()
        assert desc["operator"] == "sine_gordon"
        assert desc["diffusion"] == "identity"


class TestExactSolution:
    @pytest.mark.parametrize("operator,d", [("sine_gordon", 6), ("biharmonic", 5)])
    def test_vanishes_on_boundary(self, operator, d):
        inst = make_instance(operator, d)
        z = np.random.default_rng(0).standard_normal((4, d))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        for r in ([1.0] if operator == "sine_gordon" else [1.0, 2.0]):
            np.testing.assert_allclose(exact_value(inst, r * z), 0.0, atol=1e-12)

    @pytest.mark.parametrize("operator,d", [("sine_gordon", 7), ("biharmonic", 6)])
    def test_grad_lap_vs_fd(self, operator, d):
        inst = make_instance(operator, d, coeff_seed=1)
        X = sample_domain_points(inst.domain, 6, np.random.default_rng(1))
        u, grad, lap = exact_value_grad_lap(inst, X)
        np.testing.assert_allclose(u, exact_value(inst, X), rtol=1e-13)
        h = 1e-5
        for k in range(d):
            e = np.zeros(d)
            e[k] = h
            g_fd = (exact_value(inst, X + e) - exact_value(inst, X - e)) / (2 * h)
            np.testing.assert_allclose(grad[:, k], g_fd, rtol=1e-6, atol=1e-8)
        lap_fd = fd_laplacian(lambda P: exact_value(inst, P), X)
        np.testing.assert_allclose(lap, lap_fd, rtol=1e-4, atol=1e-4)

    def test_fast_laplacian_matches_generic_jets(self):
        # the window-decomposition path against full coordinate jets
        for operator, d in (("sine_gordon", 8), ("biharmonic", 6)):
            inst = make_instance(operator, d, coeff_seed=3)
            X = sample_domain_points(inst.domain, 10, np.random.default_rng(2))
            _, _, lap = exact_value_grad_lap(inst, X)
            lap_jets = laplacian_from_lines(exact_line_eval(inst), X).value
            np.testing.assert_allclose(lap, lap_jets, rtol=1e-11, atol=1e-11)

    def test_circuit_matches_values(self):
        inst = make_instance("sine_gordon", 5, coeff_seed=2)
        X = sample_domain_points(inst.domain, 5, np.random.default_rng(3))
        from jetpinn.jets import line_jets

        out = exact_solution_circuit(inst)(line_jets(X, np.zeros_like(X), 0))
        np.testing.assert_allclose(out.coeffs[0].value, exact_value(inst, X), rtol=1e-13)


class TestForcing:
    def test_sine_gordon_forcing_definition(self):
        inst = make_instance("sine_gordon", 6, coeff_seed=1)
        X = sample_domain_points(inst.domain, 8, np.random.default_rng(4))
        g = forcing_eval(inst, X)
        u, _, lap = exact_value_grad_lap(inst, X)
        np.testing.assert_allclose(g, lap + np.sin(u), rtol=1e-12)

    def test_biharmonic_forcing_vs_fd_of_laplacian(self):
        inst = make_instance("biharmonic", 4, coeff_seed=2)
        X = sample_domain_points(inst.domain, 4, np.random.default_rng(5))
        g = forcing_eval(inst, X)
        lap = lambda P: exact_value_grad_lap(inst, P)[2]
        g_fd = fd_laplacian(lap, X, h=1e-4)
        np.testing.assert_allclose(g, g_fd, rtol=1e-4)

    def test_forcing_gradient_vs_fd(self):
        inst = make_instance("sine_gordon", 5, coeff_seed=3)
        X = sample_domain_points(inst.domain, 5, np.random.default_rng(6))
        gg = forcing_gradient(inst, X)
        h = 1e-5
        for k in range(5):
            e = np.zeros(5)
            e[k] = h
            fd = (forcing_eval(inst, X + e) - forcing_eval(inst, X - e)) / (2 * h)
            np.testing.assert_allclose(gg[:, k], fd, rtol=1e-5, atol=1e-6)

    def test_forcing_gradient_biharmonic_rejected(self):
        inst = make_instance("biharmonic", 4)
        with pytest.raises(ValueError):
            forcing_gradient(inst, np.zeros((1, 4)))


class TestFourthOrderDirections:
    def test_weights_reconstruct_biharmonic_of_polynomial(self):
        # u = |x|^4: Delta^2 u = 8 d (d + 2) [DERIVED]
        from jetpinn.jets import jet_mul, line_jets
        from jetpinn.network import squared_radius_jet

        d = 4

        def eval_line(x, v, k):
            r2 = squared_radius_jet(line_jets(x, v, k))
            return jet_mul(r2, r2)

        X = np.random.default_rng(7).standard_normal((3, d))
        out = biharmonic_from_lines(eval_line, X)
        np.testing.assert_allclose(out.value, 8 * d * (d + 2), rtol=1e-11)

    def test_direction_count(self):
        dirs, wts = fourth_order_directions(5)
        assert dirs.shape == (5 + 2 * 10, 5)
        assert wts.shape == (25,)

    def test_d1_weight(self):
        dirs, wts = fourth_order_directions(1)
        np.testing.assert_allclose(wts, [1.0])


@pytest.fixture(scope="module")
def sg_setup():
    inst = make_instance("sine_gordon", 5, coeff_seed=2)
    rng = np.random.default_rng(1)
    params = init_params((5, 14, 14, 1), rng)
    X = sample_domain_points(inst.domain, 4, rng)
    return inst, params, X


class TestResiduals:
    def test_full_residual_vs_fd(self, sg_setup):
        inst, params, X = sg_setup
        r, u = residual_full_batch(inst, params, X)
        f = wrapped_eval(inst, params)
        lap_fd = fd_laplacian(f, X)
        want = lap_fd + np.sin(f(X)) - forcing_eval(inst, X)
        np.testing.assert_allclose(r.value, want, rtol=1e-5, atol=1e-5)
        np.testing.assert_allclose(u.value, f(X), rtol=1e-12)

    def test_hte_exact_under_sign_enumeration(self, sg_setup):
        # all 2^d Rademacher probes average to the exact Laplacian
        inst, params, X = sg_setup
        d = inst.d
        signs = np.array(list(itertools.product([-1.0, 1.0], repeat=d)))
        pv = np.broadcast_to(signs, (X.shape[0],) + signs.shape)
        r_hte, _ = residual_hte_batch(inst, params, X, pv)
        r_full, _ = residual_full_batch(inst, params, X)
        np.testing.assert_allclose(r_hte.value, r_full.value, rtol=1e-10)

    def test_coordinate_full_equals_full(self, sg_setup):
        inst, params, X = sg_setup
        idx = np.tile(np.arange(inst.d), (X.shape[0], 1))
        r_c, _ = residual_coordinate_batch(inst, params, X, idx, 1.0)
        r_f, _ = residual_full_batch(inst, params, X)
        np.testing.assert_allclose(r_c.value, r_f.value, rtol=1e-12)

    def test_sdgd_unbiased(self, sg_setup):
        inst, params, X = sg_setup
        x = X[:1]
        r_f, _ = residual_full_batch(inst, params, x)
        gen = np.random.default_rng(8)
        vals = [residual_sdgd(inst, params, x[0], 2, gen).value for _ in range(4000)]
        se = np.std(vals) / np.sqrt(len(vals))
        assert np.mean(vals) == pytest.approx(float(r_f.value[0]), abs=4 * se)

    def test_diffusion_matrix_trace(self, sg_setup):
        inst, params, X = sg_setup
        d = inst.d
        sigma = np.random.default_rng(9).standard_normal((d, d)) * 0.2 + np.eye(d)
        inst_s = make_instance("sine_gordon", d, coeff_seed=2, diffusion=sigma)
        M = inst_s.diffusion_matrix
        r, _ = residual_full_batch(inst_s, params, X)
        f = wrapped_eval(inst_s, params)
        h = 1e-4
        H = np.zeros((X.shape[0], d, d))
        for a in range(d):
            for b in range(d):
                ea, eb = np.zeros(d), np.zeros(d)
                ea[a], eb[b] = h, h
                H[:, a, b] = (
                    f(X + ea + eb) - f(X + ea - eb) - f(X - ea + eb) + f(X - ea - eb)
                ) / (4 * h * h)
        want = np.einsum("ab,nab->n", M, H) + np.sin(f(X)) - forcing_eval(inst_s, X)
        np.testing.assert_allclose(r.value, want, rtol=1e-4, atol=1e-4)

    def test_biharmonic_full_vs_fd(self):
        inst = make_instance("biharmonic", 3, coeff_seed=4)
        params = init_params((3, 10, 10, 1), np.random.default_rng(10))
        X = sample_domain_points(inst.domain, 3, np.random.default_rng(11))
        r, _ = residual_full_batch(inst, params, X)
        f = wrapped_eval(inst, params)

        def bih_fd(h):
            # sum of d^4/dx_i^2 dx_j^2 by composed central stencils [DERIVED]
            d = X.shape[1]
            total = np.zeros(X.shape[0])
            for i in range(d):
                for j in range(d):
                    ei, ej = np.zeros(d), np.zeros(d)
                    ei[i], ej[j] = h, h
                    acc = np.zeros(X.shape[0])
                    for ci, si in ((1.0, 1), (-2.0, 0), (1.0, -1)):
                        for cj, sj in ((1.0, 1), (-2.0, 0), (1.0, -1)):
                            acc += ci * cj * f(X + si * ei + sj * ej)
                    total += acc / h**4
            return total

        h = 0.05
        rich = (4.0 * bih_fd(h / 2) - bih_fd(h)) / 3.0
        want = rich - forcing_eval(inst, X)
        np.testing.assert_allclose(r.value, want, rtol=1e-4, atol=1e-4)

    def test_biharmonic_probes_must_be_gaussian(self):
        inst = make_instance("biharmonic", 4)
        params = init_params((4, 6, 1), np.random.default_rng(12))
        x = sample_domain_points(inst.domain, 1, np.random.default_rng(13))[0]
        with pytest.raises(ValueError):
            residual_hte(inst, params, x, sample_probes("rademacher", 4, 4, 0))

    def test_single_point_wrappers(self, sg_setup):
        inst, params, X = sg_setup
        x = X[0]
        rv = residual_full(inst, params, x)
        assert isinstance(rv, ResidualValue)
        assert rv.method == "full"
        hv = residual_hte(inst, params, x, sample_probes("rademacher", 5, 8, 0))
        assert hv.method == "hte(8)"
        sv = residual_sdgd(inst, params, x, 3, 0)
        assert sv.method == "sdgd(3)"
        with pytest.raises(ValueError):
            residual_sdgd(inst, params, x, 9, 0)


class TestGpinn:
    def test_exact_loop_vs_fd(self, sg_setup):
        inst, params, X = sg_setup
        pv = sample_probes("rademacher", 5, 3, 11).vectors[None].repeat(X.shape[0], axis=0)
        pen = gpinn_penalty_batch(inst, params, X, pv, mode="exact_loop")

        def rhat(P):
            rr, _ = residual_hte_batch(inst, params, P, pv)
            return rr.value

        h = 1e-5
        gfd = np.zeros((X.shape[0], 5))
        for k in range(5):
            e = np.zeros(5)
            e[k] = h
            gfd[:, k] = (rhat(X + e) - rhat(X - e)) / (2 * h)
        np.testing.assert_allclose(pen.value, (gfd**2).sum(axis=1), rtol=1e-5)

    def test_probe_mode_unbiased(self, sg_setup):
        inst, params, X = sg_setup
        X = X[:2]
        pv = sample_probes("rademacher", 5, 2, 1).vectors[None].repeat(2, axis=0)
        exact = gpinn_penalty_batch(inst, params, X, pv, mode="exact_loop")
        wv = (
            np.random.default_rng(4).integers(0, 2, size=(2, 20000, 5)).astype(float) * 2 - 1
        )
        probe = gpinn_penalty_batch(inst, params, X, pv, mode="probe", w_vectors=wv)
        np.testing.assert_allclose(probe.value, exact.value, rtol=0.05)

    def test_penalty_gradient_flows(self, sg_setup):
        inst, params, X = sg_setup
        pv = sample_probes("rademacher", 5, 2, 3).vectors[None].repeat(X.shape[0], axis=0)
        pen = tape.tmean(gpinn_penalty_batch(inst, params, X, pv, mode="exact_loop"))
        grads = tape.grad(pen, params.parameters())
        assert any(np.abs(g).max() > 0 for g in grads)

    def test_exact_circuit_override(self):
        # harness hook: the penalty of the exact solution's own residual gradient
        inst = make_instance("sine_gordon", 4, coeff_seed=1)
        X = sample_domain_points(inst.domain, 3, np.random.default_rng(5))
        pv = sample_probes("rademacher", 4, 2, 2).vectors[None].repeat(3, axis=0)
        pen = gpinn_penalty_batch(
            inst, None, X, pv, mode="exact_loop", dirs_eval=exact_direction_eval(inst),
            u=tape.constant(exact_value(inst, X)),
        )
        assert pen.value.shape == (3,)
        assert np.all(np.isfinite(pen.value))

    def test_mode_validation(self, sg_setup):
        inst, params, X = sg_setup
        pv = sample_probes("rademacher", 5, 2, 3).vectors[None].repeat(X.shape[0], axis=0)
        with pytest.raises(ValueError):
            gpinn_penalty_batch(inst, params, X, pv, mode="other")
        with pytest.raises(ValueError):
            gpinn_penalty(inst, params, X[0], sample_probes("rademacher", 5, 2, 0),
                          mode="probe", W=0)

    def test_biharmonic_rejected(self):
        inst = make_instance("biharmonic", 4)
        with pytest.raises(ValueError):
            gpinn_penalty_batch(inst, None, np.zeros((1, 4)), np.zeros((1, 1, 4)))


class TestDirectionEvalEquivalence:
    def test_network_direction_eval_matches_line_eval(self, sg_setup):
        inst, params, X = sg_setup
        dirs = np.random.default_rng(14).standard_normal((X.shape[0], 3, 5))
        out = network_direction_eval(inst, params)(X, dirs, 3)
        flat = network_line_eval(inst, params)(
            np.repeat(X, 3, axis=0), dirs.reshape(-1, 5), 3
        )
        for k in range(1, 4):
            np.testing.assert_allclose(
                out.coeffs[k].value, flat.coeffs[k].value.reshape(X.shape[0], 3), rtol=1e-11
            )
