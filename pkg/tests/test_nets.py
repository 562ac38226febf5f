import numpy as np
import pytest

from xdgan.nets import (
    Domain, GaussianPosterior, ImageBatch, Model, ModelConfig, ModeError, one_hot,
)
from xdgan.tensor import Tensor


@pytest.fixture(scope="module")
def cdrd():
    return Model(ModelConfig(mode="cdrd", d_z=16, k=10), seed=3)


@pytest.fixture(scope="module")
def ecdrd():
    return Model(ModelConfig(mode="ecdrd", d_z=16, k=10), seed=3)


def rand_images(n=4, seed=0, domain=Domain.SOURCE, labels=False):
    rng = np.random.default_rng(seed)
    px = rng.uniform(-1, 1, (n, 1, 28, 28)).astype(np.float32)
    lab = rng.integers(0, 10, n) if labels else None
    return ImageBatch(px, domain, lab)


def test_generate_shape_and_range(cdrd):
    rng = np.random.default_rng(0)
    z = rng.standard_normal((8, 16), dtype=np.float32)
    labels = np.arange(8) % 10
    out = cdrd.generate(z, labels, Domain.SOURCE)
    assert out.pixels.shape == (8, 1, 28, 28)
    assert out.domain is Domain.SOURCE
    assert np.all(out.pixels > -1) and np.all(out.pixels < 1)
    assert np.isfinite(out.pixels).all()


def test_generate_label_out_of_range(cdrd):
    z = np.zeros((2, 16), dtype=np.float32)
    with pytest.raises(ValueError, match="out of range"):
        cdrd.generate(z, [0, 10], Domain.SOURCE)


def test_trunk_identical_across_domains(cdrd):
    rng = np.random.default_rng(1)
    z = rng.standard_normal((4, 16), dtype=np.float32)
    labels = np.array([0, 1, 2, 3])
    captured = []
    orig = cdrd.gen_trunk

    def spy(zz, ll):
        h = orig(zz, ll)
        captured.append(h.data)
        return h

    cdrd.gen_trunk = spy
    try:
        img_s = cdrd.generate(z, labels, Domain.SOURCE)
        img_t = cdrd.generate(z, labels, Domain.TARGET)
    finally:
        cdrd.gen_trunk = orig
    np.testing.assert_array_equal(captured[0], captured[1])
    assert not np.array_equal(img_s.pixels, img_t.pixels)  # branches differ


def test_generate_deterministic(cdrd):
    z = np.random.default_rng(2).standard_normal((3, 16), dtype=np.float32)
    labels = [1, 2, 3]
    a = cdrd.generate(z, labels, Domain.TARGET).pixels
    b = cdrd.generate(z, labels, Domain.TARGET).pixels
    np.testing.assert_array_equal(a, b)


def test_encode_mean_branch(ecdrd):
    batch = rand_images(seed=4)
    post, z = ecdrd.encode(batch, sample=False)
    np.testing.assert_array_equal(z, post.mu.data)


def test_encode_requires_encoder(cdrd):
    with pytest.raises(ModeError):
        cdrd.encode(rand_images(), sample=False)
    with pytest.raises(ModeError):
        cdrd.player_params("E")


def test_encode_requires_noise_when_sampling(ecdrd):
    with pytest.raises(ValueError, match="noise"):
        ecdrd.encode(rand_images(), sample=True)


def test_sampling_concentrates_at_small_logvar(ecdrd):
    # logvar = -10 (sigma ~ 0.0067): z within 0.05 of mu essentially always
    rng = np.random.default_rng(5)
    mu = Tensor(rng.uniform(-1, 1, (64, 16)).astype(np.float32))
    post = GaussianPosterior(mu, Tensor(np.full((64, 16), -10.0, dtype=np.float32)))
    eps = rng.standard_normal((64, 16), dtype=np.float32)
    z = ecdrd.sample_z(post, eps)
    frac = np.mean(np.abs(z.data - mu.data) < 0.05)
    assert frac >= 0.99


def test_sampling_is_unbiased(ecdrd):
    # mean of z - mu over 10^4 draws within 3*sigma/100 per coordinate
    rng = np.random.default_rng(6)
    d = 8
    mu = Tensor(rng.uniform(-1, 1, (1, d)).astype(np.float32))
    post = GaussianPosterior(mu, Tensor(np.zeros((1, d), dtype=np.float32)))  # sigma = 1
    acc = np.zeros(d)
    n = 10_000
    eps = rng.standard_normal((n, d), dtype=np.float32)
    for i in range(0, n, 500):
        chunk = eps[i:i + 500]
        z = ecdrd.sample_z(GaussianPosterior(
            Tensor(np.repeat(mu.data, len(chunk), axis=0)),
            Tensor(np.zeros((len(chunk), d), dtype=np.float32))), chunk)
        acc += (z.data - mu.data).sum(axis=0)
    assert np.all(np.abs(acc / n) < 3.0 / 100.0)


def test_discriminate_contracts(cdrd):
    batch = rand_images(n=6, seed=7)
    realness, logits, feats = cdrd.discriminate(batch)
    assert realness.shape == (6,)
    assert np.all(realness > 0) and np.all(realness < 1)
    assert logits.shape == (6, 10)
    probs = np.exp(logits - logits.max(axis=1, keepdims=True))
    probs /= probs.sum(axis=1, keepdims=True)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-5)
    assert feats.shape == (6, cdrd.cfg.feat_dim)


def test_front_ends_differ_but_trunk_shared(cdrd):
    batch_s = rand_images(n=5, seed=8, domain=Domain.SOURCE)
    batch_t = ImageBatch(batch_s.pixels, Domain.TARGET)
    r_s, l_s, _ = cdrd.discriminate(batch_s)
    r_t, l_t, _ = cdrd.discriminate(batch_t)
    assert not np.array_equal(r_s, r_t)
    assert not np.array_equal(l_s, l_t)
    src = cdrd.path_params("D", Domain.SOURCE)
    tgt = cdrd.path_params("D", Domain.TARGET)
    for name in src:
        if name.startswith("d_c."):
            assert src[name] is tgt[name]
    assert src["d_s.conv.w"] is not tgt["d_t.conv.w"]


def test_parameter_sharing_audit(ecdrd):
    for comp, shared_prefix in (("G", "g_c."), ("D", "d_c."), ("E", "e_c.")):
        src = ecdrd.path_params(comp, Domain.SOURCE)
        tgt = ecdrd.path_params(comp, Domain.TARGET)
        shared = [n for n in src if n.startswith(shared_prefix)]
        assert shared, f"no shared params found for {comp}"
        for name in shared:
            assert src[name] is tgt[name], f"{name} duplicated across paths"


def test_param_count_shared_once(ecdrd):
    c = ecdrd.cfg
    thw = c.trunk_hw
    fd = c.feat_dim
    g_c = (c.d_z + c.k) * c.gen_trunk_ch * thw * thw + c.gen_trunk_ch * thw * thw \
        + c.gen_trunk_ch * c.gen_mid_ch * 16 + c.gen_mid_ch
    branch = c.gen_mid_ch * c.gen_low_ch * 16 + c.gen_low_ch + c.gen_low_ch * 9 + 1
    d_front = c.disc_low_ch * 16 + c.disc_low_ch
    d_c = c.disc_low_ch * c.disc_high_ch * 16 + c.disc_high_ch \
        + fd * 1 + 1 + fd * c.k + c.k
    e_c = c.disc_low_ch * c.disc_high_ch * 16 + c.disc_high_ch + fd * 2 * c.d_z + 2 * c.d_z
    expected = g_c + 2 * branch + 2 * d_front + d_c + 2 * d_front + e_c
    assert ecdrd.param_count() == expected


def test_reconstruct_is_encode_then_generate(ecdrd):
    batch = rand_images(n=3, seed=9, domain=Domain.TARGET)
    labels = np.array([4, 5, 6])
    eps = np.random.default_rng(10).standard_normal((3, 16), dtype=np.float32)
    rec = ecdrd.reconstruct(batch, labels, noise=eps)
    _, z = ecdrd.encode(batch, sample=True, noise=eps)
    ref = ecdrd.generate(z, labels, Domain.TARGET)
    np.testing.assert_array_equal(rec.pixels, ref.pixels)
    assert rec.pixels.shape == batch.pixels.shape


def test_translate_matches_reconstruct_same_domain(ecdrd):
    batch = rand_images(n=3, seed=11)
    labels = np.array([1, 2, 3])
    eps = np.random.default_rng(12).standard_normal((3, 16), dtype=np.float32)
    a = ecdrd.translate(batch, labels, batch.domain, noise=eps)
    b = ecdrd.reconstruct(batch, labels, noise=eps)
    np.testing.assert_array_equal(a.pixels, b.pixels)


def test_translate_domain_tag_and_shared_trunk(ecdrd):
    batch = rand_images(n=3, seed=13)
    labels = np.array([7, 8, 9])
    eps = np.random.default_rng(14).standard_normal((3, 16), dtype=np.float32)
    captured = []
    orig = ecdrd.gen_trunk

    def spy(zz, ll):
        h = orig(zz, ll)
        captured.append(h.data)
        return h

    ecdrd.gen_trunk = spy
    try:
        out = ecdrd.translate(batch, labels, Domain.TARGET, noise=eps)
        rec = ecdrd.reconstruct(batch, labels, noise=eps)
    finally:
        ecdrd.gen_trunk = orig
    assert out.domain is Domain.TARGET
    assert rec.domain is Domain.SOURCE
    np.testing.assert_array_equal(captured[0], captured[1])


def test_checkpoint_roundtrip_bit_exact(tmp_path, ecdrd):
    path = tmp_path / "model.npz"
    ecdrd.save(path)
    loaded = Model.load(path)
    assert loaded.cfg == ecdrd.cfg
    orig = ecdrd.named_params()
    for name, p in loaded.named_params().items():
        np.testing.assert_array_equal(p.data, orig[name].data)
        assert p.data.dtype == orig[name].data.dtype


def test_checkpoint_rejects_wrong_version(tmp_path, cdrd):
    path = tmp_path / "model.npz"
    cdrd.save(path)
    import json
    with np.load(path) as z:
        arrays = {k: z[k] for k in z.files}
    meta = json.loads(arrays["__meta__"].tobytes().decode())
    meta["version"] = 99
    arrays["__meta__"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    with pytest.raises(ValueError, match="version"):
        Model.load(path)


def test_one_hot_contract():
    oh = one_hot([0, 2], 3)
    np.testing.assert_array_equal(oh, [[1, 0, 0], [0, 0, 1]])
    with pytest.raises(ValueError):
        one_hot([3], 3)
