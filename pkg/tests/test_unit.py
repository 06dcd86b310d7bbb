import struct

import numpy as np
import pytest

from streetshift.dataset import GREEN, GREY, synth_domain
from streetshift.numeric import grad_check
from streetshift.unit import (
    CheckpointCorrupt, CheckpointError, CheckpointVersionError, NonFiniteLossError, UnitConfig, build_model,
    compute_loss, cycle, decode, encode, load_checkpoint, reconstruct, save_checkpoint, train, translate,
)
from streetshift.unit.checkpoint import from_bytes, to_bytes
from streetshift.unit.inference import from_unit, to_unit
from streetshift.unit.model import LOSS_TERMS, build_loss_graph


def small(**kw):
    base = dict(image_size=16, base_width=4, latent_channels=8, seed=3)
    base.update(kw)
    return build_model(UnitConfig(**base))


@pytest.fixture(scope="module")
def domains():
    return np.stack(synth_domain(12, GREEN, seed=1, size=16)), np.stack(synth_domain(12, GREY, seed=2, size=16))


# ---------------------------------------------------------------- construction


def test_build_is_deterministic():
    a, b = small(), small()
    assert list(a.params) == list(b.params)
    assert all(a.params[k].data.tobytes() == b.params[k].data.tobytes() for k in a.params)
    assert small(seed=4).params["enc_a.down1.w"].data.tobytes() != a.params["enc_a.down1.w"].data.tobytes()


def test_init_statistics():
    m = build_model(UnitConfig(seed=0))
    w = np.concatenate([p.data.ravel() for k, p in m.params.items() if k.endswith(".w")])
    assert abs(w.std() - 0.02) < 0.001
    assert all((p.data == 0).all() for k, p in m.params.items() if k.endswith(".b"))


def test_discriminator_width_is_independent():
    m = small(base_width=8, dis_width=2)
    assert m.params["dis_a.c1.w"].data.shape == (2, 3, 4, 4)
    assert m.params["dis_b.c3.w"].data.shape == (8, 4, 4, 4)
    assert m.params["enc_a.down1.w"].data.shape == (8, 3, 4, 4)


@pytest.mark.parametrize("size", [64, 48])
def test_supported_sizes(size):
    if size == 48:
        with pytest.raises(ValueError):
            UnitConfig(image_size=size)
    else:
        m = build_model(UnitConfig(image_size=size, base_width=2, latent_channels=2))
        assert translate(m, np.zeros((size, size, 3), np.uint8)).shape == (size, size, 3)


def test_shared_stages_are_one_storage():
    m = small()
    ea, eb = m.encoder_params("A"), m.encoder_params("B")
    ga, gb = m.generator_params("A"), m.generator_params("B")
    for k in m.shared_enc:
        assert ea[k] is eb[k]
    for k in m.shared_gen:
        assert ga[k] is gb[k]
    ea["enc_shared.res.c1.w"].data[0, 0, 0, 0] = 7.0
    assert eb["enc_shared.res.c1.w"].data[0, 0, 0, 0] == 7.0


def test_training_through_a_moves_shared_stage_seen_from_b(domains):
    m = small()
    shared = m.encoder_params("A")["enc_shared.res.c1.w"]
    before = shared.data.copy()
    train(m, domains[0], domains[1], 1)
    assert m.encoder_params("B")["enc_shared.res.c1.w"] is shared
    assert not np.array_equal(shared.data, before)


def test_generator_output_shape():
    m = small()
    z = np.random.default_rng(0).standard_normal((5, 8, 2, 2)).astype(np.float32)
    assert decode(m, z, "A").shape == (5, 16, 16, 3)
    assert decode(m, z[0], "B").shape == (16, 16, 3)


# ---------------------------------------------------------------- inference


def test_unit_scaling_round_trip():
    img = np.arange(256, dtype=np.uint8).reshape(1, 16, 16, 1).repeat(3, axis=3)
    x = to_unit(img)
    assert x.shape == (1, 3, 16, 16) and x.min() == -1 and x.max() == 1
    np.testing.assert_array_equal(from_unit(x), img)


def test_zero_noise_gives_mu(domains):
    mu, z = encode(small(), domains[0], "A")
    np.testing.assert_array_equal(mu, z)


def test_sampled_noise_is_reproducible(domains):
    m = small()
    z1 = encode(m, domains[0], "A", "sample", np.random.default_rng(9))[1]
    z2 = encode(m, domains[0], "A", "sample", np.random.default_rng(9))[1]
    np.testing.assert_array_equal(z1, z2)


def test_sampled_noise_averages_to_mu(domains):
    m = small()
    x = np.repeat(domains[0][:1], 10000, axis=0)
    mu, z = encode(m, x, "A", "sample", np.random.default_rng(0))
    assert np.abs(z.mean(axis=0) - mu[0]).max() < 0.05
    assert z.std(axis=0).mean() == pytest.approx(1.0, abs=0.02)


def test_translate_reconstruct_cycle_shapes_and_determinism(domains):
    m = small()
    a = domains[0]
    for f in (lambda x: translate(m, x, "A2B"), lambda x: translate(m, x, "B2A"),
              lambda x: reconstruct(m, x, "A"), lambda x: cycle(m, x, "A")):
        out = f(a)
        assert out.shape == a.shape and out.dtype == np.uint8
        np.testing.assert_array_equal(out, f(a))
    assert translate(m, a[0], "A2B").shape == a[0].shape
    np.testing.assert_array_equal(translate(m, a[0]), translate(m, a)[0])


def test_size_mismatch_rejected():
    m = small()
    with pytest.raises(ValueError):
        translate(m, np.zeros((32, 32, 3), np.uint8))
    with pytest.raises(ValueError):
        translate(m, np.zeros((16, 16, 3), np.uint8), "A2C")


# ---------------------------------------------------------------- losses


def test_zero_lambdas_zero_total(domains):
    m = small(lambdas=(0, 0, 0, 0, 0))
    br = compute_loss(m, domains[0][:2], domains[1][:2], np.random.default_rng(0))
    assert br.total == 0.0 and br.rec_a > 0


def test_total_is_weighted_sum(domains):
    m = small()
    br = compute_loss(m, domains[0][:3], domains[1][:3], np.random.default_rng(1))
    assert br.total == pytest.approx(br.weighted(m.lambdas), rel=1e-5)
    assert all(getattr(br, k) >= 0 for k in LOSS_TERMS)


def test_doubling_a_lambda_doubles_its_share(domains):
    lam = (50.0, 0.1, 100.0, 0.1, 100.0)
    m1 = small(lambdas=lam)
    m2 = small(lambdas=lam[:2] + (200.0,) + lam[3:])
    a, b = domains[0][:2], domains[1][:2]
    b1 = compute_loss(m1, a, b, np.random.default_rng(5))
    b2 = compute_loss(m2, a, b, np.random.default_rng(5))
    for k in LOSS_TERMS:
        assert getattr(b1, k) == getattr(b2, k)
    assert b2.total - b1.total == pytest.approx(100.0 * (b1.rec_a + b1.rec_b), rel=1e-5)


def test_identity_rigged_generators_zero_reconstruction():
    m = small()
    colour = np.array([40, 128, 200], np.uint8)
    img = np.broadcast_to(colour, (1, 16, 16, 3)).copy()
    for k, p in m.params.items():
        if k.startswith(("gen_a.", "gen_b.", "gen_shared.")):
            p.data[...] = 0
    target = colour.astype(np.float64) / 127.5 - 1
    for side in ("a", "b"):
        m.params[f"gen_{side}.up3.b"].data[:] = np.arctanh(target).astype(np.float32)
    br = compute_loss(m, img, img)
    assert br.rec_a == pytest.approx(0, abs=1e-6) and br.rec_b == pytest.approx(0, abs=1e-6)
    assert br.cc_rec_a == pytest.approx(0, abs=1e-6)


def test_zero_mean_latent_zero_kl(domains):
    m = small()
    for k, p in m.params.items():
        if k.startswith(("enc_",)):
            p.data[...] = 0
    br = compute_loss(m, domains[0][:2], domains[1][:2], np.random.default_rng(0))
    assert br.kl_a == br.kl_b == br.cc_kl_a == br.cc_kl_b == 0.0


def test_composite_loss_gradients_reduced_width():
    m = small(init_std=0.2, seed=0)
    g = build_loss_graph(m, 1, np.float64)
    rng = np.random.default_rng(0)
    feeds = {"xa": rng.uniform(-1, 1, (1, 3, 16, 16)), "xb": rng.uniform(-1, 1, (1, 3, 16, 16))}
    feeds.update({k: rng.standard_normal((1, 8, 2, 2)) for k in ("eps_a", "eps_b", "eps_aba", "eps_bab")})
    # Biases feeding an instance norm have an exactly zero gradient, hence the absolute floor; the
    # small step keeps perturbations from straddling leaky-relu and abs kinks.
    rep = grad_check(g, feeds, loss="total", max_entries=3, seed=0, step=1e-5, floor=1e-4)
    assert rep.max_error < 1e-3, sorted(rep.errors.items(), key=lambda kv: -kv[1])[:5]


# ---------------------------------------------------------------- training


def test_steps_must_be_positive(domains):
    with pytest.raises(ValueError):
        train(small(), domains[0], domains[1], 0)


def test_one_step_updates_each_side_once(domains):
    m = small()
    trace = train(m, domains[0], domains[1], 1)
    st = m.train_state
    assert len(trace) == 1 and st.step == 1 and st.gen_opt.step == 1 and st.dis_opt.step == 1
    assert set(st.dis_opt.m) == {k for k in m.params if k.startswith("dis_")}
    assert set(st.gen_opt.m) == {k for k in m.params if not k.startswith("dis_")}


def test_training_is_deterministic(domains):
    def run():
        m = small()
        return train(m, domains[0], domains[1], 5), to_bytes(m)

    (t1, c1), (t2, c2) = run(), run()
    assert t1 == t2 and c1 == c2


def test_split_training_equals_uninterrupted(domains, tmp_path):
    m1 = small()
    t1 = train(m1, domains[0], domains[1], 6)
    m2 = small()
    t2 = train(m2, domains[0], domains[1], 3)
    save_checkpoint(m2, tmp_path / "half.ckpt")
    m3 = load_checkpoint(tmp_path / "half.ckpt")
    t2 += train(m3, domains[0], domains[1], 3)
    assert t1 == t2
    assert to_bytes(m1) == to_bytes(m3)


def test_trace_every(domains):
    trace = train(small(), domains[0], domains[1], 6, trace_every=3)
    assert [r["step"] for r in trace] == [3, 6]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_names_the_term(domains):
    m = small()
    m.params["dis_b.c4.b"].data[:] = np.nan
    with pytest.raises(NonFiniteLossError) as err:
        train(m, domains[0], domains[1], 2)
    assert err.value.term == "dis_b" and err.value.step == 1
    m = small()
    m.params["enc_a.down1.b"].data[:] = np.inf
    with pytest.raises(NonFiniteLossError) as err:
        train(m, domains[0], domains[1], 2)
    assert err.value.term in LOSS_TERMS + ("dis_a", "dis_b")


# ---------------------------------------------------------------- checkpoints


def test_checkpoint_round_trip_bit_exact(domains, tmp_path):
    m = small()
    train(m, domains[0], domains[1], 2)
    save_checkpoint(m, tmp_path / "m.ckpt")
    back = load_checkpoint(tmp_path / "m.ckpt")
    assert back.config == m.config
    assert all(back.params[k].data.tobytes() == m.params[k].data.tobytes() for k in m.params)
    assert back.train_state.step == 2
    assert back.train_state.rng.bit_generator.state == m.train_state.rng.bit_generator.state
    assert to_bytes(back) == to_bytes(m)
    assert (tmp_path / "m.ckpt").read_bytes()[:8] == b"UNITCKPT"


def test_untrained_checkpoint_round_trip():
    m = small()
    back = from_bytes(to_bytes(m))
    assert back.train_state is None
    np.testing.assert_array_equal(translate(back, np.zeros((16, 16, 3), np.uint8)),
                                  translate(m, np.zeros((16, 16, 3), np.uint8)))


def test_truncated_checkpoint():
    blob = to_bytes(small())
    for cut in (4, 20, len(blob) // 2, len(blob) - 1):
        with pytest.raises(CheckpointCorrupt):
            from_bytes(blob[:cut])


def test_flipped_byte_detected():
    blob = bytearray(to_bytes(small()))
    blob[len(blob) // 2] ^= 0xFF
    with pytest.raises(CheckpointCorrupt):
        from_bytes(bytes(blob))


def test_version_mismatch():
    blob = bytearray(to_bytes(small()))
    blob[8:10] = struct.pack("<H", 99)
    with pytest.raises(CheckpointVersionError):
        from_bytes(bytes(blob))


def test_shape_mismatch():
    m = small()
    m.params["enc_a.down1.w"].data = np.zeros((1, 1, 1, 1), np.float32)
    with pytest.raises(CheckpointError, match="shape"):
        from_bytes(to_bytes(m))
