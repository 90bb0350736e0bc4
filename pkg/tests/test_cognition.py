import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nccmarl import autodiff as ad
from nccmarl.autodiff import Optimizer, OptimizerConfig, ShapeError, Tape
from nccmarl.cognition import (
    LOG_SIGMA_MAX,
    LOG_SIGMA_MIN,
    CognitionHead,
    GaussianLatent,
    cd_loss,
    kl_diag_gaussians,
    kl_to_unit_gaussian,
    kl_value,
    sample,
)
from nccmarl.oracles import (
    gradient_error,
    kl_diag_gaussian_reference,
    kl_monte_carlo,
    numeric_gradient,
)


def latent(mu, log_sigma):
    mu = np.atleast_2d(np.asarray(mu, dtype=np.float64))
    ls = np.atleast_2d(np.asarray(log_sigma, dtype=np.float64))
    return GaussianLatent(ad.constant(mu), ad.constant(ls))


def random_latent(rng, dim=4, requires_grad=False):
    make = ad.parameter if requires_grad else ad.constant
    return GaussianLatent(
        make(rng.uniform(-2.0, 2.0, size=(1, dim))),
        make(rng.uniform(-1.0, 0.7, size=(1, dim))),
    )


class TestEncode:
    def test_zero_weights_give_unit_gaussian(self):
        rng = np.random.default_rng(0)
        head = CognitionHead(3, 4, recon_dims=[3], decoder_hidden=8, rng=rng)
        for p in head.params:
            p.data[...] = 0.0
        with ad.no_grad():
            agent_vec, lat = head.encode(ad.constant(np.ones((2, 3))))
        assert np.array_equal(agent_vec.data, np.zeros((2, 4)))
        assert np.array_equal(lat.mu.data, np.zeros((2, 4)))
        assert np.array_equal(np.exp(lat.log_sigma.data), np.ones((2, 4)))

    def test_identical_inputs_identical_latents(self):
        rng = np.random.default_rng(1)
        head = CognitionHead(5, 3, recon_dims=[5], decoder_hidden=8, rng=rng)
        h = rng.standard_normal((1, 5))
        with ad.no_grad():
            _, l1 = head.encode(ad.constant(h.copy()))
            _, l2 = head.encode(ad.constant(h.copy()))
        assert np.array_equal(l1.mu.data, l2.mu.data)
        assert np.array_equal(l1.log_sigma.data, l2.log_sigma.data)

    def test_log_sigma_clamped(self):
        rng = np.random.default_rng(2)
        head = CognitionHead(2, 2, recon_dims=[2], decoder_hidden=4, rng=rng)
        with ad.no_grad():
            _, lat = head.encode(ad.constant(1e4 * np.ones((1, 2))))
        assert np.all(lat.log_sigma.data >= LOG_SIGMA_MIN)
        assert np.all(lat.log_sigma.data <= LOG_SIGMA_MAX)

    def test_encoder_gradient_through_kl(self):
        rng = np.random.default_rng(3)
        head = CognitionHead(4, 3, recon_dims=[4], decoder_hidden=6, rng=rng)
        x = ad.constant(rng.standard_normal((2, 4)))
        other = GaussianLatent(
            ad.constant(rng.uniform(-2, 2, size=(2, 3))),
            ad.constant(rng.uniform(-1, 0.7, size=(2, 3))),
        )

        def loss():
            _, lat = head.encode(x)
            return kl_diag_gaussians(lat, other)

        for p in head.mu_layer.params + head.log_sigma_layer.params:
            with Tape():
                ad.backward(loss())
            err = gradient_error(p.grad, numeric_gradient(loss, p))
            ad.zero_grads(head.params)
            assert err < 1e-4


class TestSample:
    def test_zero_epsilon_returns_mean(self):
        lat = latent([1.0, -2.0], [0.3, -0.1])
        out = sample(lat, np.zeros((1, 2)))
        assert np.array_equal(out.data, lat.mu.data)

    def test_clamp_floor_is_near_deterministic(self):
        lat = latent([0.5], [LOG_SIGMA_MIN])
        out = sample(lat, np.ones((1, 1)))
        assert out.data[0, 0] == pytest.approx(0.5 + np.exp(LOG_SIGMA_MIN))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            sample(latent([0.0], [0.0]), np.zeros((1, 3)))

    def test_empirical_mean_matches_mu(self):
        rng = np.random.default_rng(4)
        mu = np.array([[0.7, -1.2, 0.1]])
        ls = np.array([[0.2, -0.3, 0.0]])
        lat = latent(mu, ls)
        n = 10**5
        eps = rng.standard_normal((n, 3))
        draws = mu + np.exp(ls) * eps  # same law as sample(), vectorized
        single = sample(lat, eps[:1])
        assert np.array_equal(single.data, draws[:1])
        tol = 3.0 * np.exp(ls[0]) / np.sqrt(n)
        assert np.all(np.abs(draws.mean(axis=0) - mu[0]) < tol)

    def test_gradients_reach_mu_and_sigma_not_epsilon(self):
        rng = np.random.default_rng(5)
        mu = ad.parameter(rng.standard_normal((1, 3)))
        ls = ad.parameter(rng.uniform(-1, 0.5, size=(1, 3)))
        eps = ad.constant(rng.standard_normal((1, 3)))

        def loss():
            return ad.tmean(ad.square(sample(GaussianLatent(mu, ls), eps)))

        with Tape():
            ad.backward(loss())
        assert eps.grad is None
        for p in (mu, ls):
            err = gradient_error(p.grad, numeric_gradient(loss, p))
            p.grad = None
            assert err < 1e-4


class TestKl:
    def test_self_divergence_is_zero(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            p = random_latent(rng)
            assert 0.0 <= kl_diag_gaussians(p, p).item() < 1e-12

    def test_unit_shift_closed_form(self):
        p = latent([1.0], [0.0])
        q = latent([0.0], [0.0])
        assert kl_diag_gaussians(p, q).item() == pytest.approx(0.5)

    def test_kl_to_unit_examples(self):
        assert kl_to_unit_gaussian(latent([0.0], [0.0])).item() == pytest.approx(0.0)
        assert kl_to_unit_gaussian(latent([2.0], [0.0])).item() == pytest.approx(2.0)

    def test_kl_to_unit_equals_explicit_unit_latent(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            p = random_latent(rng)
            explicit = GaussianLatent.unit(p.mu.shape)
            assert kl_to_unit_gaussian(p).item() == kl_diag_gaussians(p, explicit).item()

    def test_matches_reference_formula(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            p, q = random_latent(rng), random_latent(rng)
            ref = kl_diag_gaussian_reference(
                p.mu.data[0], np.exp(p.log_sigma.data[0]),
                q.mu.data[0], np.exp(q.log_sigma.data[0]),
            )
            assert kl_diag_gaussians(p, q).item() == pytest.approx(ref, rel=1e-12)

    def test_matches_monte_carlo(self):
        rng = np.random.default_rng(9)
        for _ in range(10):
            p, q = random_latent(rng), random_latent(rng)
            closed = kl_diag_gaussians(p, q).item()
            mc = kl_monte_carlo(
                p.mu.data[0], np.exp(p.log_sigma.data[0]),
                q.mu.data[0], np.exp(q.log_sigma.data[0]),
                n_samples=10**5, rng=rng,
            )
            assert abs(closed - mc) / max(abs(closed), 1e-3) < 0.01

    def test_asymmetry_exists_and_is_tolerated(self):
        rng = np.random.default_rng(10)
        asymmetric = 0
        for _ in range(20):
            p, q = random_latent(rng), random_latent(rng)
            if abs(kl_diag_gaussians(p, q).item() - kl_diag_gaussians(q, p).item()) > 1e-6:
                asymmetric += 1
        assert asymmetric > 0

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(-3, 3), min_size=2, max_size=6), st.data())
    def test_nonnegative_property(self, mus, data):
        dim = len(mus)
        draw = lambda lo, hi: data.draw(
            st.lists(st.floats(lo, hi), min_size=dim, max_size=dim)
        )
        p = latent(mus, draw(-4.0, 1.5))
        q = latent(draw(-3.0, 3.0), draw(-4.0, 1.5))
        assert kl_diag_gaussians(p, q).item() >= 0.0

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            kl_diag_gaussians(latent([0.0], [0.0]), latent([0.0, 0.0], [0.0, 0.0]))

    def test_kl_value_diagnostic_matches_tape(self):
        rng = np.random.default_rng(11)
        p, q = random_latent(rng), random_latent(rng)
        assert kl_value(p, q) == pytest.approx(kl_diag_gaussians(p, q).item(), rel=1e-12)

    def test_gradients_flow_through_both_directions(self):
        rng = np.random.default_rng(12)
        p = random_latent(rng, requires_grad=True)
        q = random_latent(rng, requires_grad=True)

        def loss():
            return kl_diag_gaussians(p, q)

        params = [p.mu, p.log_sigma, q.mu, q.log_sigma]
        for par in params:
            with Tape():
                ad.backward(loss())
            err = gradient_error(par.grad, numeric_gradient(loss, par))
            ad.zero_grads(params)
            assert err < 1e-4


class TestReconstruct:
    def test_zero_decoder_gives_zero_reconstruction(self):
        rng = np.random.default_rng(13)
        head = CognitionHead(3, 4, recon_dims=[5], decoder_hidden=6, rng=rng)
        for p in head.params:
            p.data[...] = 0.0
        target = rng.standard_normal((2, 5))
        with ad.no_grad():
            recon = head.reconstruct(ad.constant(np.zeros((2, 4))))[0]
            loss = ad.mse(recon, ad.constant(target))
        assert np.array_equal(recon.data, np.zeros((2, 5)))
        assert loss.item() == pytest.approx(np.mean(target**2))

    def test_overfits_single_observation(self):
        rng = np.random.default_rng(14)
        head = CognitionHead(6, 8, recon_dims=[6], decoder_hidden=32, rng=rng)
        obs = ad.constant(rng.uniform(-1, 1, size=(1, 6)))
        opt = Optimizer(head.params, OptimizerConfig(kind="adam", lr=3e-3))
        final = None
        for _ in range(2000):
            with Tape():
                _, lat = head.encode(obs)
                recon = head.reconstruct(sample(lat, np.zeros((1, 8))))[0]
                loss = ad.mse(recon, obs)
                ad.backward(loss)
            opt.step()
            final = loss.item()
        assert final < 1e-3

    def test_reconstruction_gradient_matches_fd(self):
        rng = np.random.default_rng(15)
        head = CognitionHead(4, 3, recon_dims=[4], decoder_hidden=6, rng=rng)
        target = ad.constant(rng.standard_normal((2, 4)))
        z = ad.constant(rng.standard_normal((2, 3)))

        def loss():
            return ad.mse(head.reconstruct(z)[0], target)

        for p in head.decoders[0].params:
            with Tape():
                ad.backward(loss())
            err = gradient_error(p.grad, numeric_gradient(loss, p))
            ad.zero_grads(head.params)
            assert err < 1e-4


class TestCdLoss:
    def test_identical_neighbor_latents_leave_reconstruction_only(self):
        rng = np.random.default_rng(16)
        own = random_latent(rng)
        twin = GaussianLatent(ad.constant(own.mu.data.copy()),
                              ad.constant(own.log_sigma.data.copy()))
        target = ad.constant(rng.standard_normal((1, 3)))
        recon = ad.constant(rng.standard_normal((1, 3)))
        out = cd_loss(0, [target], [recon], own, [twin], mode="neighborhood")
        assert out.item() == pytest.approx(ad.mse(recon, target).item(), rel=1e-12)

    def test_perfect_everything_is_zero(self):
        rng = np.random.default_rng(17)
        own = random_latent(rng)
        twin = GaussianLatent(ad.constant(own.mu.data.copy()),
                              ad.constant(own.log_sigma.data.copy()))
        target = ad.constant(rng.standard_normal((1, 3)))
        out = cd_loss(
            0, [target], [ad.constant(target.data.copy())], own, [twin], mode="neighborhood"
        )
        assert out.item() < 1e-12

    def test_hand_computed_neighbor_kl(self):
        own = latent([0.0], [0.0])
        n1 = latent([1.0], [0.0])
        n2 = latent([0.0], [0.0])
        zero = ad.constant(np.zeros((1, 2)))
        out = cd_loss(
            0, [zero], [ad.constant(np.zeros((1, 2)))], own, [n1, n2], mode="neighborhood"
        )
        assert out.item() == pytest.approx(0.25)

    def test_isolated_agent_falls_back_to_unit_prior(self, caplog):
        own = latent([2.0], [0.0])
        zero = ad.constant(np.zeros((1, 1)))
        with caplog.at_level("WARNING"):
            out = cd_loss(3, [zero], [zero], own, [], mode="neighborhood")
        assert "no neighbors" in caplog.text
        assert out.item() == pytest.approx(2.0)

    def test_global_unit_mode_ignores_neighbors(self):
        rng = np.random.default_rng(18)
        own = latent([2.0], [0.0])
        zero = ad.constant(np.zeros((1, 1)))
        out = cd_loss(0, [zero], [zero], own, [random_latent(rng, 1)], mode="global_unit")
        assert out.item() == pytest.approx(2.0)

    def test_minimizing_cd_loss_shrinks_neighbor_kl(self):
        # three agents on a line, fixed observations, dissonance loss only
        rng = np.random.default_rng(19)
        heads_in, dim = 5, 4
        encoders = [
            CognitionHead(heads_in, dim, recon_dims=[heads_in], decoder_hidden=12, rng=rng)
            for _ in range(3)
        ]
        obs = [ad.constant(rng.uniform(-1, 1, size=(1, heads_in))) for _ in range(3)]
        neighborhoods = {0: [1], 1: [0, 2], 2: [1]}
        params = [p for h in encoders for p in h.params]
        opt = Optimizer(params, OptimizerConfig(kind="adam", lr=1e-3))

        def mean_pairwise_kl():
            with ad.no_grad():
                lats = [encoders[i].encode(obs[i])[1] for i in range(3)]
            vals = [
                kl_value(lats[i], lats[j]) for i in range(3) for j in neighborhoods[i]
            ]
            return float(np.mean(vals))

        initial = mean_pairwise_kl()
        for _ in range(5000):
            with Tape():
                lats, recons = [], []
                for i in range(3):
                    _, lat = encoders[i].encode(obs[i])
                    recons.append(encoders[i].reconstruct(sample(lat, np.zeros((1, dim)))))
                    lats.append(lat)
                losses = [
                    cd_loss(i, [obs[i]], recons[i], lats[i],
                            [lats[j] for j in neighborhoods[i]])
                    for i in range(3)
                ]
                ad.backward(ad.sum_tensors(losses))
            opt.step()
        assert mean_pairwise_kl() < 0.1 * initial
