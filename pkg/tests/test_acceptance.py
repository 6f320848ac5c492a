"""Acceptance suite: one test per shipped guarantee.

Each test states a user-visible property of the public surface and checks it
against evidence produced inside this file — hand arithmetic, brute-force
re-computation, or closed forms — never against the code path under test.
"""

import math
import os

import numpy as np
import numpy.testing as npt
import scipy.special
import torch

import conftest
from styletrace import diffcore, evalkit, imgproc, infer, losses, nets, train

GEN_PREFIXES = ("encoder.", "transform.", "decoder.")


def _fast_prior() -> imgproc.PriorConfig:
    # small kernels keep the numpy preprocessing out of the timing picture
    return imgproc.PriorConfig(blur_kernel=3, bilateral_diameter=3)


class _GradScene:
    """A miniature two-content/two-style generator step in float64.

    Mirrors one training step's forward composition: numpy prior and edge-map
    preprocessing (constant with respect to parameters), shared encoder
    pyramids, fused decoding, and every objective term driven by the same
    seeded patch and positive draws. Slot layout pairs each content with both
    styles so the content-contrastive term always has a positive partner.
    """

    SLOT_CONTENT = (0, 1, 0, 1)
    SLOT_STYLE = (0, 1, 1, 0)
    N_PATCHES = 4

    def __init__(self, seed: int):
        rng = np.random.default_rng(seed)
        self.params = nets.build_model(base_width=4, proj_dim=8, seed=seed, dtype=torch.float64)
        self.params.domain_disc.min_input = 16
        self.weights = losses.LossWeights()
        cfg = _fast_prior()
        self.contents = [rng.random((3, 16, 16)) for _ in range(2)]
        self.styles = [rng.random((3, 16, 16)) for _ in range(2)]
        self.crops = {s: (self.styles[s], np.roll(self.styles[s], 5, axis=2)) for s in (0, 1)}
        self.patch_seeds = [int(v) for v in rng.integers(0, 2**31, size=len(self.SLOT_CONTENT))]
        self.seed_cs = int(rng.integers(0, 2**31))
        self.seed_cc = int(rng.integers(0, 2**31))
        self.priors = [
            imgproc.build_prior(self.contents[c], self.crops[s][0], cfg)
            for c, s in zip(self.SLOT_CONTENT, self.SLOT_STYLE)
        ]
        self.priors_cc = [imgproc.build_prior(c, c, cfg) for c in self.contents]
        self.priors_ss = [imgproc.build_prior(s, s, cfg) for s in self.styles]
        self.sobel_content = [imgproc.sobel_map(c) for c in self.contents]
        self.sobel_style = [imgproc.sobel_map(s) for s in self.styles]
        with torch.no_grad():
            self.stylized_const = self._stylized()[0].detach()

    def _encode(self, imgs):
        return self.params.encoder(diffcore.to_tensor(np.stack(imgs), dtype=torch.float64))

    def _stylized(self):
        pyr_priors = self._encode(self.priors)
        pyr_styles = self._encode([self.crops[s][0] for s in self.SLOT_STYLE])
        fused = self.params.transform(pyr_priors, pyr_styles)
        base = diffcore.to_tensor(np.stack(self.priors), dtype=torch.float64)
        out, _ = self.params.decoder.decode(fused, base)
        return out, pyr_styles

    def _style_real(self):
        imgs = [self.crops[s][0] for s in self.SLOT_STYLE]
        return diffcore.to_tensor(np.stack(imgs), dtype=torch.float64)

    def term_style(self):
        out, pyr_styles = self._stylized()
        return losses.style_loss(self.params.encoder(out), pyr_styles)

    def term_content(self):
        out, _ = self._stylized()
        pyr_contents = self._encode([self.contents[c] for c in self.SLOT_CONTENT])
        return losses.content_loss(self.params.encoder(out), pyr_contents)

    def term_identity(self):
        w = self.weights
        pyr_cc_prior = self._encode(self.priors_cc)
        pyr_cc_style = self._encode(self.contents)
        icc, _ = self.params.decoder.decode(
            self.params.transform(pyr_cc_prior, pyr_cc_style),
            diffcore.to_tensor(np.stack(self.priors_cc), dtype=torch.float64),
        )
        pyr_ss_prior = self._encode(self.priors_ss)
        pyr_ss_style = self._encode(self.styles)
        iss, _ = self.params.decoder.decode(
            self.params.transform(pyr_ss_prior, pyr_ss_style),
            diffcore.to_tensor(np.stack(self.priors_ss), dtype=torch.float64),
        )
        return losses.identity_loss(
            icc,
            diffcore.to_tensor(np.stack(self.contents), dtype=torch.float64),
            iss,
            diffcore.to_tensor(np.stack(self.styles), dtype=torch.float64),
            self.params.encoder(icc),
            pyr_cc_style,
            self.params.encoder(iss),
            pyr_ss_style,
            pixel_weight=w.identity_pixel,
            feature_weight=w.identity_feature,
        )

    def term_adversarial_g(self):
        out, _ = self._stylized()
        return losses.adversarial_losses(self.params.domain_disc, self._style_real(), out)[1]

    def term_adversarial_d(self):
        # the fake side is detached inside the loss, so the cached forward is exact
        return losses.adversarial_losses(
            self.params.domain_disc, self._style_real(), self.stylized_const
        )[0]

    def _patch_terms(self, out):
        terms = []
        for i, (c, s) in enumerate(zip(self.SLOT_CONTENT, self.SLOT_STYLE)):
            terms.append(
                losses.patch_cooccurrence_loss(
                    out[i],
                    self.crops[s][0],
                    self.contents[c],
                    self.sobel_style[s],
                    self.sobel_content[c],
                    self.params.patch_disc_simple,
                    self.params.patch_disc_complex,
                    n_patches=self.N_PATCHES,
                    seed=self.patch_seeds[i],
                )
            )
        return terms

    def term_patch_simple(self):
        out, _ = self._stylized()
        return torch.stack([t.simple_generator for t in self._patch_terms(out)]).mean()

    def term_patch_complex(self):
        out, _ = self._stylized()
        return torch.stack([t.complex_generator for t in self._patch_terms(out)]).mean()

    def term_patch_d(self):
        terms = self._patch_terms(self.stylized_const)
        return torch.stack([t.discriminator for t in terms]).mean()

    def term_contra_style(self):
        out, _ = self._stylized()
        crops = [self.crops[s][0] for s in (0, 1)] + [self.crops[s][1] for s in (0, 1)]
        imgs = torch.cat([out, diffcore.to_tensor(np.stack(crops), dtype=torch.float64)])
        codes = self.params.style_proj(self.params.encoder(imgs))
        group_ids = list(self.SLOT_STYLE) + [0, 1, 0, 1]
        anchors = [True] * len(self.SLOT_STYLE) + [False] * 4
        return losses.contrastive_style(codes, group_ids, anchors, self.weights.tau, self.seed_cs)

    def term_contra_content(self):
        out, _ = self._stylized()
        codes = self.params.content_proj(self.params.encoder(out))
        return losses.contrastive_content(
            codes, list(self.SLOT_CONTENT), self.weights.tau, self.seed_cc
        )

    def total(self):
        total, _ = losses.total_loss(
            style=self.term_style(),
            adversarial=self.term_adversarial_g(),
            content=self.term_content(),
            identity=self.term_identity(),
            contra_style=self.term_contra_style(),
            contra_content=self.term_contra_content(),
            patch_simple=self.term_patch_simple(),
            patch_complex=self.term_patch_complex(),
            weights=self.weights,
        )
        return total

    def subset(self, prefixes):
        return {
            n: p for n, p in self.params.named_parameters().items() if n.startswith(prefixes)
        }


def test_zeroed_final_decoder_layer_makes_stylize_return_the_prior():
    """With the residual head silenced, ten random pairs come back as the
    weighted prior, bit for bit, under the default preprocessing settings."""
    params = nets.build_model(base_width=4, proj_dim=8, seed=0)
    params.decoder.zero_final_()
    opts = infer.StylizeOptions()
    rng = np.random.default_rng(42)
    for i in range(10):
        h, w = (32, 32) if i % 2 else (48, 32)
        content = rng.random((3, h, w))
        style = rng.random((3, h, w))
        out = infer.stylize(content, style, params, opts)
        expected = imgproc.build_prior(content, style, opts.prior).astype(np.float32)
        npt.assert_array_equal(out, expected)


def _fd_check(fn, params, seed, max_coords, label):
    # Two step sizes: a relu-kink graze fails the larger one, cancellation
    # noise on near-zero gradients fails the smaller one, a wrong gradient
    # fails both. The same coordinates are sampled either way.
    first = diffcore.grad_check(fn, params, tolerance=1e-3, max_coords=max_coords, h=1e-5, seed=seed)
    if first.passed:
        return
    second = diffcore.grad_check(fn, params, tolerance=1e-3, max_coords=max_coords, h=1e-6, seed=seed)
    assert second.passed, f"{label}: h=1e-5 {first}; h=1e-6 {second}"


def test_every_loss_term_and_the_composed_objective_pass_gradient_check():
    """Central finite differences agree with reverse-mode gradients, term by
    term and end to end, on 16x16 float64 scenes across five seeds."""
    gen = GEN_PREFIXES
    cases = [
        ("style", _GradScene.term_style, gen),
        ("content", _GradScene.term_content, gen),
        ("identity", _GradScene.term_identity, gen),
        ("adversarial_g", _GradScene.term_adversarial_g, gen + ("domain_disc.",)),
        ("adversarial_d", _GradScene.term_adversarial_d, ("domain_disc.",)),
        ("patch_simple", _GradScene.term_patch_simple, gen + ("patch_disc_simple.",)),
        ("patch_complex", _GradScene.term_patch_complex, gen + ("patch_disc_complex.",)),
        ("patch_d", _GradScene.term_patch_d, ("patch_disc_simple.", "patch_disc_complex.")),
        ("contra_style", _GradScene.term_contra_style, gen + ("style_proj.",)),
        ("contra_content", _GradScene.term_contra_content, gen + ("content_proj.",)),
    ]
    for seed in range(5):
        scene = _GradScene(seed)
        for name, fn, prefixes in cases:
            _fd_check(
                lambda _params, fn=fn: fn(scene),
                scene.subset(prefixes),
                seed,
                max_coords=8,
                label=f"seed {seed}, term {name}",
            )
        _fd_check(
            lambda _params: scene.total(),
            scene.subset(("",)),
            seed,
            max_coords=16,
            label=f"seed {seed}, composed objective",
        )


def test_loss_zero_identities_and_hand_arithmetic_fixture():
    """A pyramid against itself costs exactly zero for the style and content
    terms, perfect self-reconstruction costs zero, scaling one raw term moves
    the total by its weight alone, and 1..8 under the book weights sum to
    21 + 0.25*7 + 0.75*8 = 28.75."""
    params = nets.build_model(base_width=4, proj_dim=8, seed=5, dtype=torch.float64)
    img = diffcore.to_tensor(np.random.default_rng(5).random((2, 3, 16, 16)), dtype=torch.float64)
    pyr = params.encoder(img)
    assert losses.style_loss(pyr, pyr).item() == 0.0
    assert losses.content_loss(pyr, pyr).item() == 0.0

    other = diffcore.to_tensor(np.random.default_rng(6).random((2, 3, 16, 16)), dtype=torch.float64)
    pyr_other = params.encoder(other)
    ident = losses.identity_loss(
        img, img.clone(), other, other.clone(), pyr, pyr, pyr_other, pyr_other
    )
    assert ident.item() == 0.0

    terms = {
        n: torch.tensor(v, dtype=torch.float64)
        for n, v in zip(losses.TERM_NAMES, [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0])
    }
    unit_contra = losses.LossWeights(contra_style=1.0, contra_content=1.0)
    total, report = losses.total_loss(**terms, weights=unit_contra)
    assert total.item() == 28.75
    assert report.total == 28.75

    w = losses.LossWeights()
    lams = [
        w.style, w.adversarial, w.content, w.identity,
        w.contra_style, w.contra_content, w.patch_simple, w.patch_complex,
    ]
    base, _ = losses.total_loss(**terms, weights=w)
    for name, lam in zip(losses.TERM_NAMES, lams):
        bumped = dict(terms)
        bumped[name] = terms[name] + 1.0
        moved, _ = losses.total_loss(**bumped, weights=w)
        npt.assert_allclose(moved.item() - base.item(), lam, rtol=0, atol=1e-12)


def _dense_nce_oracle(codes, group_ids, is_anchor, tau, seed):
    """Grouped InfoNCE recomputed from the full similarity matrix in numpy.

    Positive assignments come from the published selection helper (they are
    part of the contract); every bit of loss arithmetic is independent.
    """
    codes = np.asarray(codes, dtype=np.float64)
    sims = codes @ codes.T
    pairs = losses.choose_positives(group_ids, is_anchor, np.random.default_rng(seed))
    per_anchor = []
    for i, pos in pairs:
        negs = [j for j, g in enumerate(group_ids) if g != group_ids[i]]
        logits = sims[i, [pos] + negs] / tau
        per_anchor.append(scipy.special.logsumexp(logits) - logits[0])
    return float(np.mean(per_anchor))


def test_contrastive_losses_match_a_dense_similarity_oracle():
    """Both grouped-contrastive entry points agree with the dense numpy
    recomputation on batches of 4..16 over twenty seeds, and with the
    one-positive/one-negative hand case -log(e / (e + 1))."""
    for seed in range(20):
        rng = np.random.default_rng(seed)
        k = int(rng.integers(4, 17))
        codes_np = rng.normal(size=(k, 6))
        group_ids = [i % 2 for i in range(k)]
        is_anchor = [bool(v) for v in rng.random(k) < 0.6]
        is_anchor[0] = True
        tau = float(rng.choice([0.2, 0.5, 1.0]))
        codes = torch.tensor(codes_np, dtype=torch.float64)

        got_style = losses.contrastive_style(codes, group_ids, is_anchor, tau, seed)
        want_style = _dense_nce_oracle(codes_np, group_ids, is_anchor, tau, seed)
        npt.assert_allclose(got_style.item(), want_style, rtol=0, atol=1e-6)

        got_content = losses.contrastive_content(codes, group_ids, tau, seed)
        want_content = _dense_nce_oracle(codes_np, group_ids, [True] * k, tau, seed)
        npt.assert_allclose(got_content.item(), want_content, rtol=0, atol=1e-6)

    hand_codes = torch.tensor([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]], dtype=torch.float64)
    expected = -math.log(math.e / (math.e + 1.0))
    got = losses.contrastive_style(hand_codes, [0, 0, 1], [True, False, False], 1.0, 0)
    npt.assert_allclose(got.item(), expected, rtol=0, atol=1e-6)
    # all-anchor variant: the lone group-1 entry has no partner and is skipped,
    # the two group-0 anchors each contribute the identical forced term
    got_all = losses.contrastive_content(hand_codes, [0, 0, 1], 1.0, 0)
    npt.assert_allclose(got_all.item(), expected, rtol=0, atol=1e-6)


def test_accumulated_contrastive_gradients_match_the_full_batch():
    """Chunked logit accumulation over a macro batch of eight reproduces the
    direct full-batch parameter gradients for every chunk size."""
    tau, seed = 0.2, 7
    group_ids = [0, 1, 0, 1, 0, 1, 0, 1]
    anchors = [True] * 4 + [False] * 4
    params = nets.build_model(base_width=4, proj_dim=8, seed=3, dtype=torch.float64)
    imgs = diffcore.to_tensor(
        np.random.default_rng(3).random((8, 3, 16, 16)), dtype=torch.float64
    )

    def embed(batch):
        return params.style_proj(params.encoder(batch))

    tracked = {
        n: p
        for n, p in params.named_parameters().items()
        if n.startswith(("encoder.", "style_proj."))
    }
    for p in tracked.values():
        p.requires_grad_(True)

    def clear():
        for p in tracked.values():
            p.grad = None

    clear()
    direct = losses.info_nce(embed(imgs), group_ids, anchors, tau, seed)
    direct.backward()
    ref = {n: p.grad.detach().clone() for n, p in tracked.items()}

    for sub in (1, 2, 4, 8):
        clear()
        value = train.logit_accumulated_contrastive(
            imgs, embed, group_ids, anchors, tau, seed, subbatch=sub
        )
        npt.assert_allclose(value, direct.item(), rtol=0, atol=1e-6)
        for n, p in tracked.items():
            assert p.grad is not None, f"sub={sub}: no gradient for {n}"
            npt.assert_allclose(
                p.grad.detach().numpy(), ref[n].numpy(), rtol=1e-5, atol=1e-12,
                err_msg=f"sub={sub}, param {n}",
            )


def test_edge_score_routing_and_patch_lambda_split():
    """On a half-flat/half-noise image every low-routed patch scores at or
    below every high-routed patch for 100 seeds, flat footprints sit at the
    roundoff floor while noisy ones sit well above it, and the 0.25/0.75
    patch weights surface exactly in the total."""
    rng = np.random.default_rng(11)
    flat = np.full((3, 16, 16), 0.5)
    noise = rng.random((3, 16, 16))
    img = np.concatenate([flat, noise], axis=2)
    sobel = imgproc.sobel_map(img)

    saw_flat = saw_noise = False
    for seed in range(100):
        origins = imgproc.sample_patch_origins(
            16, 32, sobel, n=8, patch_size=8, rng=np.random.default_rng(seed)
        )
        scores = [s for _, _, s in origins]
        lo, hi = imgproc.split_indices_by_score(scores)
        assert max(scores[i] for i in lo) <= min(scores[j] for j in hi), seed
        for x, _, score in origins:
            if x + 8 <= 14:  # footprint clear of the seam's edge response
                assert score <= 1e-12  # constant region, roundoff only
                saw_flat = True
            if x >= 18:
                assert score > 1e-3
                saw_noise = True
    assert saw_flat and saw_noise

    def only(name, value):
        terms = {n: torch.tensor(0.0, dtype=torch.float64) for n in losses.TERM_NAMES}
        terms[name] = torch.tensor(value, dtype=torch.float64)
        return losses.total_loss(**terms, weights=losses.LossWeights())[0].item()

    assert only("patch_simple", 1.0) == 0.25
    assert only("patch_complex", 1.0) == 0.75
    assert only("patch_simple", 1.0) + only("patch_complex", 1.0) == 1.0


def test_recolor_transfers_mean_and_covariance():
    """Over 100 random pairs the recolored pixels carry the style mean to
    1e-3 and the style covariance to 1e-2 per entry; a constant content image
    still comes back finite."""
    rng = np.random.default_rng(23)
    for _ in range(100):
        content = rng.random((3, 24, 24))
        style = rng.random((3, 24, 24))
        out = imgproc.recolor(content, style, clip=False)
        flat_out = out.reshape(3, -1)
        flat_style = style.reshape(3, -1)
        npt.assert_allclose(flat_out.mean(axis=1), flat_style.mean(axis=1), rtol=0, atol=1e-3)
        npt.assert_allclose(np.cov(flat_out), np.cov(flat_style), rtol=0, atol=1e-2)
        assert np.isfinite(out).all()

    constant = np.full((3, 24, 24), 0.5)
    style = rng.random((3, 24, 24))
    assert np.isfinite(imgproc.recolor(constant, style)).all()
    assert np.isfinite(imgproc.recolor(constant, constant)).all()


def _brute_chamfer(img_a, img_b):
    pts_a = img_a.reshape(3, -1).T * 255.0
    pts_b = img_b.reshape(3, -1).T * 255.0
    sq = ((pts_a[:, None, :] - pts_b[None, :, :]) ** 2).sum(axis=2)
    return float(sq.min(axis=1).mean() + sq.min(axis=0).mean())


def test_metric_implementations_match_brute_force_and_closed_form():
    """The tree-backed color distance equals the O(N^2) scan on small images,
    the Gaussian distance matches its diagonal closed form, and the paired
    feature metric is symmetric."""
    rng = np.random.default_rng(31)
    for h, w in ((8, 8), (12, 16), (16, 16)):
        img_a = rng.random((3, h, w))
        img_b = rng.random((3, h, w))
        got = evalkit.chamfer_color(img_a, img_b)
        npt.assert_allclose(got, _brute_chamfer(img_a, img_b), rtol=1e-6, atol=1e-6)

    for seed in range(10):
        r = np.random.default_rng(seed)
        mu_a, mu_b = r.normal(size=5), r.normal(size=5)
        va, vb = r.uniform(0.1, 2.0, size=5), r.uniform(0.1, 2.0, size=5)
        got = evalkit.frechet_distance(mu_a, np.diag(va), mu_b, np.diag(vb))
        closed = float(((mu_a - mu_b) ** 2).sum() + (va + vb - 2.0 * np.sqrt(va * vb)).sum())
        npt.assert_allclose(got, closed, rtol=0, atol=1e-4)

    params = nets.build_model(base_width=4, proj_dim=8, seed=1)
    img_a = rng.random((3, 24, 24))
    img_b = rng.random((3, 24, 24))
    forward = evalkit.sifid(img_a, img_b, params)
    backward = evalkit.sifid(img_b, img_a, params)
    assert abs(forward - backward) <= 1e-6


def test_short_overfit_run_drives_the_total_loss_down(tmp_path):
    """Two hundred steps on two 64x64 content/style pairs under default
    weights cut the moving-average total to at most 60% of its early value,
    with every logged number finite."""
    content_manifest, style_manifest = conftest.write_overfit_dataset(tmp_path)
    cfg = train.TrainConfig(
        content_manifest=content_manifest,
        style_manifest=style_manifest,
        out_dir=os.path.join(str(tmp_path), "run"),
        steps=200,
        batch_size=2,
        crop_size=64,
        learning_rate=5e-4,
        seed=0,
        base_width=4,
        proj_dim=8,
        checkpoint_every=200,
        log_every=0,
        n_patches=8,
    )
    train.fit(cfg)

    table = np.genfromtxt(
        os.path.join(cfg.out_dir, "losses.csv"), delimiter=",", names=True
    )
    assert table.shape == (200,)
    for column in table.dtype.names:
        assert np.isfinite(table[column]).all(), column
    totals = table["total"]
    early = totals[:10].mean()
    late = totals[-10:].mean()
    assert late <= 0.6 * early, (early, late)


def test_blend_endpoints_are_bitwise_and_features_are_affine_in_alpha():
    """Blend zero reproduces the reconstruction path and blend one plain
    stylization, bit for bit; between and beyond the endpoints the decoder
    feature input is affine in the coefficient to 1e-6."""
    params = nets.build_model(base_width=4, proj_dim=8, seed=9)
    opts = infer.StylizeOptions(prior=_fast_prior())
    rng = np.random.default_rng(17)
    content = rng.random((3, 32, 32))
    style = rng.random((3, 32, 32))

    npt.assert_array_equal(
        infer.stylize_interp(content, style, params, 0.0, opts),
        infer.reconstruct(content, params, opts),
    )
    npt.assert_array_equal(
        infer.stylize_interp(content, style, params, 1.0, opts),
        infer.stylize(content, style, params, opts),
    )

    f0, b0 = infer.interp_features(content, style, params, 0.0, opts)
    f1, b1 = infer.interp_features(content, style, params, 1.0, opts)
    for alpha in (0.25, 0.5, 1.25, 1.5):
        fa, ba = infer.interp_features(content, style, params, alpha, opts)
        npt.assert_allclose(
            fa.numpy(),
            (1.0 - alpha) * f0.numpy() + alpha * f1.numpy(),
            rtol=0,
            atol=1e-6,
        )
        npt.assert_allclose(
            ba.numpy(), (1.0 - alpha) * b0.numpy() + alpha * b1.numpy(), rtol=0, atol=1e-6
        )


def test_bench_reports_median_seconds_at_both_working_resolutions():
    """The benchmark harness produces one timed row per requested resolution
    at 256 and 512 square; the numbers are informational, the shape and
    plausibility of the report are the contract."""
    params = nets.build_model(base_width=4, proj_dim=8, seed=0)
    opts = infer.StylizeOptions(prior=_fast_prior())
    rows = evalkit.bench_stylize(
        params, resolutions=((256, 256), (512, 512)), repeats=10, warmup=2, opts=opts
    )
    assert [(r.height, r.width) for r in rows] == [(256, 256), (512, 512)]
    for row in rows:
        assert row.seconds is not None and row.seconds > 0.0

    table = evalkit.timing_table(rows)
    lines = table.strip().split("\n")
    assert len(lines) == 3
    assert lines[0].split() == ["resolution", "seconds"]
    assert lines[1].startswith("256x256")
    assert lines[2].startswith("512x512")
