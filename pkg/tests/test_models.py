import json
import math
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize, stats

from thinar.data import AuxData, ObservedSeries, load_series, load_survey
from thinar.errors import DomainError, ValidationError
from thinar.models import (ApproxModel, ExactPriors, ModelSpec, ParamLayout, Prior, Term, build_design,
                           canonical_spec, log_joint_exact, log_posterior_approx, transform_params)
from thinar.models.approx import SD_FLOOR, Z_FLOOR
from thinar.models.design import bspline_columns, dow_columns, fourier_columns
from thinar.models.reparam import ReportedScaleTarget
from thinar.simulate import ThinnedArParams, simulate_general

FIX = Path(__file__).parent / "fixtures"
CONFIGS = Path(__file__).parents[1] / "configs"


def general_path(model: ApproxModel) -> ApproxModel:
    model.fused = False
    model._linear = None
    return model


def fd_gradient(f, u, h=1e-6):
    g = np.empty_like(u)
    for k in range(u.size):
        e = np.zeros_like(u)
        e[k] = h * max(1.0, abs(u[k]))
        g[k] = (f(u + e) - f(u - e)) / (2 * e[k])
    return g


def assert_gradient(model, u, rtol=1e-5):
    lp, g = model.logp_grad(u)
    assert np.isfinite(lp)
    fd = fd_gradient(model.logp, u)
    scale = np.maximum(np.abs(g), 1.0)
    assert np.max(np.abs(g - fd) / scale) < rtol


@pytest.fixture(scope="module")
def canonical_data():
    return load_series(FIX / "series_canonical.csv")


@pytest.fixture(scope="module")
def rota():
    return ModelSpec.from_json(CONFIGS / "rotavirus.json"), load_series(FIX / "series_rotavirus.csv")


@pytest.fixture(scope="module")
def conurbation():
    spec = ModelSpec.from_json(CONFIGS / "conurbation.json")
    data = load_series(FIX / "series_conurbation.csv")
    aux, _ = load_survey(FIX / "survey_conurbation.csv", data.strata)
    return spec, data, aux


# -- design ------------------------------------------------------------------------------

class TestDesign:
    def test_fourier_at_full_period(self):
        sc = fourier_columns(np.array([52.0]), 52)
        assert abs(sc[0, 0]) <= 1e-12 and abs(sc[0, 1] - 1.0) <= 1e-12

    @pytest.mark.parametrize("df,t_len", [(4, 30), (6, 120), (10, 208)])
    def test_bspline_partition_of_unity(self, df, t_len):
        B = bspline_columns(np.arange(1, t_len + 1), df, t_len)
        assert B.shape == (t_len, df)
        assert np.max(np.abs(B.sum(axis=1) - 1.0)) <= 1e-10

    def test_dow_weekly_cycle(self):
        D = dow_columns(np.arange(1, 30))
        assert np.array_equal(D[:-7], D[7:])
        assert np.all(D.sum(axis=1) == 1)

    def test_unknown_covariate(self):
        spec = ModelSpec({"phi": (Term("covariate", name="tests"),), "pi": (Term("intercept"),)})
        with pytest.raises(ValidationError, match="tests"):
            build_design(spec, 1, 10, {})

    def test_short_covariate(self):
        spec = ModelSpec({"phi": (Term("covariate", name="c"),), "pi": (Term("intercept"),)})
        with pytest.raises(ValidationError):
            build_design(spec, 1, 10, {"c": np.ones((1, 8))})


# -- specification ----------------------------------------------------------------------

class TestSpec:
    @pytest.mark.parametrize("name", ["sim_study", "rotavirus", "conurbation"])
    def test_configs_round_trip(self, name):
        spec = ModelSpec.from_json(CONFIGS / f"{name}.json")
        again = ModelSpec.from_dict(json.loads(json.dumps(spec.to_dict())))
        assert again == spec

    def test_packaged_configs_match(self):
        pkg = Path(__file__).parents[1] / "src" / "thinar" / "configs"
        for path in CONFIGS.glob("*.json"):
            assert (pkg / path.name).read_bytes() == path.read_bytes()

    def test_theta_not_simplex(self):
        with pytest.raises(ValidationError, match="simplex"):
            ModelSpec({"phi": (Term("intercept"),), "pi": (Term("intercept"),)}, serial_len=2,
                      theta_weights=(0.6, 0.5))

    def test_unknown_prior_family(self):
        with pytest.raises(ValidationError):
            Prior("cauchy", (0, 1))

    def test_aux_needs_population(self):
        raw = json.loads((CONFIGS / "conurbation.json").read_text())
        del raw["aux"]["population"]
        with pytest.raises(ValidationError, match="population"):
            ModelSpec.from_dict(raw)

    def test_unknown_key(self):
        raw = json.loads((CONFIGS / "sim_study.json").read_text())
        raw["extra"] = 1
        with pytest.raises(ValidationError, match="extra"):
            ModelSpec.from_dict(raw)

    def test_canonical_flag(self):
        assert canonical_spec().is_canonical
        assert not ModelSpec.from_json(CONFIGS / "rotavirus.json").is_canonical


# -- transforms -------------------------------------------------------------------------

def theta_spec(J=3):
    return ModelSpec({"nu": (Term("intercept", Prior("truncnormal_pos", (9, 4)), "natural"),),
                      "phi": (Term("intercept", Prior("truncnormal_unit", (0.6, 0.3)), "natural"),),
                      "pi": (Term("intercept", Prior("truncnormal_unit", (0.6, 0.3)), "natural"),)},
                     serial_len=J, theta_mode="estimated", x1_mode="prior")


class TestTransforms:
    def test_zero_vector(self):
        spec = theta_spec(4)
        layout = ParamLayout.from_spec(spec, ["1"], 5, build_design(spec, 1, 5))
        tr = layout.transform(np.zeros(layout.dim))
        assert tr.natural["phi.intercept"][0] == 0.5
        assert tr.natural["pi.intercept"][0] == 0.5
        assert tr.natural["nu.intercept"][0] == 1.0
        assert tr.natural["lambda1"][0] == 1.0
        assert np.allclose(tr.values["theta"], 0.25, atol=1e-15)

    def test_single_exp_log_jacobian(self):
        spec = ModelSpec({"phi": (Term("random_intercept"),), "pi": (Term("intercept"),)})
        layout = ParamLayout.from_spec(spec, ["1"], 3, build_design(spec, 1, 3))
        u = np.zeros(layout.dim)
        u[layout.by_name["phi.random_intercept.sigma"].slice] = 2.0
        assert layout.transform(u).log_jac == pytest.approx(2.0, abs=1e-15)

    def test_round_trip_random(self):
        spec = theta_spec(3)
        layout = ParamLayout.from_spec(spec, ["1"], 6, build_design(spec, 1, 6))
        rng = np.random.default_rng(0)
        for _ in range(100):
            u = rng.normal(0, 2, layout.dim)
            tr = layout.transform(u)
            assert np.max(np.abs(layout.unconstrain(tr.natural) - u)) <= 1e-12 * max(1, np.max(np.abs(u))) * 10

    def test_non_finite(self):
        spec = canonical_spec()
        with pytest.raises(DomainError):
            transform_params(spec, np.array([np.nan, 0, 0, 0]), ["1"], 2)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-6, 6), min_size=3, max_size=3))
    def test_stick_breaking_simplex(self, u):
        spec = theta_spec(4)
        layout = ParamLayout.from_spec(spec, ["1"], 5, build_design(spec, 1, 5))
        v = np.zeros(layout.dim)
        v[layout.by_name["theta"].slice] = u
        theta = layout.transform(v).values["theta"]
        assert np.all(theta >= 0) and abs(theta.sum() - 1) <= 1e-12
        back = layout.unconstrain({"theta": theta})[layout.by_name["theta"].slice]
        assert np.allclose(back, u, atol=1e-8)


# -- approximate log-density --------------------------------------------------------------

class TestApproxDensity:
    def one_point_model(self):
        spec = ModelSpec({"nu": (Term("intercept"),), "phi": (Term("intercept"),),
                          "pi": (Term("intercept", Prior("normal", (0, 2))),)},
                         x1_mode="prior", x1_prior=Prior("truncnormal_pos", (100, 50)))
        return ApproxModel(spec, ObservedSeries.single([50]))

    def test_single_point_hand_evaluation(self):
        model = self.one_point_model()
        u = np.zeros(model.dim)
        u[model.layout.by_name["lambda1"].slice] = math.log(100.0)
        lp = model.logp(u)
        tn = stats.truncnorm(-2.0, np.inf, loc=100, scale=50)
        expected = (stats.norm.logpdf(50, 50, 5) + stats.norm.logpdf(0)
                    + tn.logpdf(100.0) + math.log(100.0)  # lambda1 prior and exp Jacobian
                    + stats.norm.logpdf(0, 0, 1) * 2 + stats.norm.logpdf(0, 0, 2))  # nu, phi, pi coefficients
        assert lp == pytest.approx(expected, abs=1e-10)

    def test_sd_floor_keeps_density_finite(self):
        spec = ModelSpec({b: (Term("intercept"),) for b in ("nu", "phi", "pi")}, x1_value=(20.0,))
        model = ApproxModel(spec, ObservedSeries.single([20, 18, 22]))
        u = np.zeros(model.dim)
        u[model.layout.by_name["nu.intercept"].slice] = math.log(9.0)
        u[model.layout.by_name["phi.intercept"].slice] = math.log(0.5)
        u[model.layout.by_name["pi.intercept"].slice] = 40.0  # expit(40) == 1 in double precision
        for m in (model, general_path(ApproxModel(spec, ObservedSeries.single([20, 18, 22])))):
            lp, g = m.logp_grad(u)
            assert np.isfinite(lp) and np.all(np.isfinite(g))
        assert SD_FLOOR == 1e-3

    def test_floor_is_rejection_not_error(self, canonical_data):
        model = ApproxModel(canonical_spec(), canonical_data)
        u = model.initial_point(np.random.default_rng(0))
        u[model.layout.by_name["zstar"].slice.start + 3] = -1e3
        for m in (model, general_path(ApproxModel(canonical_spec(), canonical_data))):
            lp, _ = m.logp_grad(u)
            assert lp == -np.inf

    def test_gradient_canonical_twenty_points(self, canonical_data):
        model = ApproxModel(canonical_spec(), canonical_data)
        assert model.fused
        rng = np.random.default_rng(1)
        for _ in range(20):
            assert_gradient(model, model.initial_point(rng))

    @pytest.mark.parametrize("centred", [False, True])
    def test_fused_matches_general(self, canonical_data, centred):
        spec = canonical_spec(parametrization="centred" if centred else "noncentred")
        fast = ApproxModel(spec, canonical_data)
        slow = general_path(ApproxModel(spec, canonical_data))
        rng = np.random.default_rng(2)
        for _ in range(10):
            u = fast.initial_point(rng)
            (a, ga), (b, gb) = fast.logp_grad(u), slow.logp_grad(u)
            assert a == pytest.approx(b, abs=1e-10)
            assert np.allclose(ga, gb, rtol=1e-10, atol=1e-10)

    def test_linear_matches_general(self, rota):
        spec, data = rota
        fast = ApproxModel(spec, data)
        assert fast._linear is not None
        slow = general_path(ApproxModel(spec, data))
        rng = np.random.default_rng(3)
        for _ in range(5):
            u = fast.initial_point(rng)
            (a, ga), (b, gb) = fast.logp_grad(u), slow.logp_grad(u)
            assert a == pytest.approx(b, rel=1e-12, abs=1e-9)
            assert np.allclose(ga, gb, rtol=1e-10, atol=1e-9)

    def test_gradient_linear_kernel(self, rota):
        spec, data = rota
        model = ApproxModel(spec, data)
        assert_gradient(model, model.initial_point(np.random.default_rng(4)))

    def test_gradient_with_survey(self, conurbation):
        spec, data, aux = conurbation
        model = ApproxModel(spec, data, aux)
        assert_gradient(model, model.initial_point(np.random.default_rng(5)))

    @pytest.mark.parametrize("centred", [False, True])
    def test_gradient_general_features(self, centred):
        spec = ModelSpec(
            {"nu": (Term("intercept"), Term("fourier", period=12)),
             "phi": (Term("intercept", per_stratum=True), Term("random_intercept")),
             "pi": (Term("dow", per_stratum=True),)},
            serial_len=3, theta_mode="estimated", theta_alpha=2.0, count_family="negbin", x1_mode="prior",
            x1_prior=Prior("truncnormal_pos", (20, 10)), parametrization="centred" if centred else "noncentred")
        truth = {"nu.intercept": [2.0], "nu.fourier12": [0.2, -0.1], "phi.intercept": [[-0.5], [-0.4]],
                 "phi.random_intercept.sigma": 0.1, "pi.dow": -0.3 * np.ones((2, 7)), "theta": [0.5, 0.3, 0.2],
                 "psi": 20.0}
        sims = simulate_general(replace(spec, count_family="poisson"), 30, ["a", "b"], seed=2,
                                truth={k: v for k, v in truth.items() if k != "psi"}, burn_in=20)
        data = ObservedSeries(np.stack([s.y for s in sims]), ["a", "b"])
        model = ApproxModel(spec, data)
        rng = np.random.default_rng(6)
        for _ in range(3):
            assert_gradient(model, model.initial_point(rng))

    def test_centred_noncentred_invariance(self, canonical_data):
        nc = ApproxModel(canonical_spec(), canonical_data)
        c = ApproxModel(canonical_spec(parametrization="centred"), canonical_data)
        rng = np.random.default_rng(7)
        for _ in range(10):
            u = nc.initial_point(rng)
            s = nc.state(u)
            uc = u.copy()
            uc[c.layout.by_name["Z"].slice] = s.Z[:, 1:].reshape(-1)
            # densities over Z and z* differ by the Jacobian dz*/dZ = 1/sqrt(lambda)
            jac = -0.5 * float(np.sum(np.log(s.lam[:, 1:])))
            assert c.logp(uc) == pytest.approx(nc.logp(u) + jac, abs=1e-10)

    def test_survey_terms_are_binomial(self, conurbation):
        spec, data, aux = conurbation
        with_aux = ApproxModel(spec, data, aux)
        without = ApproxModel(replace(spec, aux=None), data)
        u = with_aux.initial_point(np.random.default_rng(8))
        Z = with_aux.state(u).Z
        pops = np.array([spec.aux.population[s] for s in data.strata])
        expected = 0.0
        for i, d, R, P in zip(aux.stratum, aux.t, aux.tests, aux.positives):
            window = Z[i, max(0, d - spec.aux.window):d]
            p = min(max(window.sum() / pops[i], 1e-10), 1 - 1e-10)
            expected += stats.binom.logpmf(P, R, p)
        assert with_aux.logp(u) - without.logp(u) == pytest.approx(expected, abs=1e-8)

    def test_misaligned_data(self, rota):
        spec, data = rota
        with pytest.raises(ValidationError):
            ApproxModel(spec, ObservedSeries.single(data.y[0, :100]))

    def test_survey_without_block(self, canonical_data):
        aux = AuxData([0], [3], [10], [2])
        with pytest.raises(ValidationError):
            ApproxModel(canonical_spec(), canonical_data, aux)

    def test_functional_wrapper(self, canonical_data):
        model = ApproxModel(canonical_spec(), canonical_data)
        u = model.initial_point(np.random.default_rng(0))
        lp, g = log_posterior_approx(canonical_spec(), canonical_data, u, want_gradient=True)
        assert lp == model.logp(u) and np.array_equal(g, model.logp_grad(u)[1])

    def test_mode_inside_support(self, canonical_data):
        model = ApproxModel(canonical_spec(), canonical_data)
        u0 = model.initial_point(np.random.default_rng(9))

        def neg(u):
            lp, g = model.logp_grad(u)
            return (1e300, np.zeros_like(u)) if not np.isfinite(lp) else (-lp, -g)

        res = optimize.minimize(neg, u0, jac=True, method="L-BFGS-B")
        assert res.fun < neg(u0)[0]
        assert np.all(model.state(res.x).Z > Z_FLOOR)


# -- exact joint ------------------------------------------------------------------------

@pytest.fixture(scope="module")
def canonical_centred(canonical_data):
    spec = replace(canonical_spec(parametrization="centred"), x1_mode="prior",
                   x1_prior=Prior("truncnormal_pos", (50, 50)))
    return ReportedScaleTarget(ApproxModel(spec, canonical_data))


class TestReportedScale:
    def test_applies(self, rota, canonical_data, conurbation):
        assert ReportedScaleTarget.applies(ApproxModel(*rota))
        assert not ReportedScaleTarget.applies(ApproxModel(canonical_spec(), canonical_data))
        spec, data, aux = conurbation  # day-of-week reporting
        assert not ReportedScaleTarget.applies(ApproxModel(replace(spec, parametrization="centred"), data, aux))
        with pytest.raises(ValueError):
            ReportedScaleTarget(ApproxModel(canonical_spec(), canonical_data))

    def test_round_trip(self, rota):
        target = ReportedScaleTarget(ApproxModel(*rota))
        u = target.model.initial_point(np.random.default_rng(8))
        assert np.allclose(target.to_base(target.from_base(u)), u, rtol=1e-12)

    def test_density_includes_jacobian(self, canonical_centred):
        target = canonical_centred
        v = target.initial_point(np.random.default_rng(9))
        jac = np.empty((v.size, v.size))
        for k in range(v.size):
            e = np.zeros_like(v)
            e[k] = 1e-6
            jac[:, k] = (target.to_base(v + e) - target.to_base(v - e)) / 2e-6
        _, logdet = np.linalg.slogdet(jac)
        assert target.logp(v) == pytest.approx(target.model.logp(target.to_base(v)) + logdet, abs=1e-6)

    def test_gradient(self, rota, canonical_centred):
        rng = np.random.default_rng(10)
        for target in (ReportedScaleTarget(ApproxModel(*rota)), canonical_centred):
            for _ in range(3):
                assert_gradient(target, target.initial_point(rng))

    def test_reports_base_quantities(self, rota):
        target = ReportedScaleTarget(ApproxModel(*rota))
        v = target.initial_point(np.random.default_rng(11))
        u = target.to_base(v)
        assert np.array_equal(target.report(v), target.model.report(u))
        assert np.allclose(target.generated(v)["lambda"], target.model.generated(u)["lambda"])

    def test_tiny_pi_rejected(self, rota):
        target = ReportedScaleTarget(ApproxModel(*rota))
        v = target.initial_point(np.random.default_rng(12))
        v[target.i_pi] = -800.0
        lp, g = target(v)
        assert lp == -np.inf and np.all(g == 0)


class TestExactJoint:
    def test_full_reporting(self):
        p = ThinnedArParams(2.0, 0.5, 1.0)
        assert np.isfinite(log_joint_exact(p, [3, 2, 4], [3, 2, 4]))
        assert log_joint_exact(p, [3, 3, 4], [3, 2, 4]) == -np.inf

    def test_tiny_case_term_by_term(self):
        p = ThinnedArParams(2.0, 0.5, 0.5)
        expected = (math.log(math.comb(3, 1) * 0.5 ** 3) + math.log(math.comb(2, 1) * 0.5 ** 2)
                    + (2 * math.log(3.5) - 3.5 - math.log(2)))
        assert log_joint_exact(p, [3, 2], [1, 1]) == pytest.approx(expected, abs=1e-12)

    def test_reported_above_true(self):
        assert log_joint_exact(ThinnedArParams(2.0, 0.5, 0.5), [3, 1], [1, 2]) == -np.inf

    def test_priors_added(self):
        p = ThinnedArParams(9.0, 0.6, 0.6)
        pri = ExactPriors()
        base = log_joint_exact(p, [3, 2], [1, 1])
        assert log_joint_exact(p, [3, 2], [1, 1], pri) == pytest.approx(base + pri.logpdf(9.0, 0.6, 0.6))

    def test_first_count_prior(self):
        p = ThinnedArParams(2.0, 0.5, 0.5)
        known = log_joint_exact(p, [3, 2], [1, 1])
        free = log_joint_exact(p, [3, 2], [1, 1], x1_mode="prior", lambda1=4.0)
        assert free - known == pytest.approx(stats.poisson.logpmf(3, 4.0))
