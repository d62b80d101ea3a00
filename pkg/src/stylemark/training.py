"""Two-stage training: bootstrap pretraining of the frozen extractor and
stylizer generators, joint encoder/decoder training with the in-loop
stylizer, then decoder-only fine-tuning under the noise pool."""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .checkpoint import Checkpoint, checkpoint_from_system, save_checkpoint, system_from_checkpoint
from .config import TrainingConfig
from .data import DatasetManifest, PairBatcher, build_manifest, quantize_8bit, sample_watermark_batch
from .distortions import NoiseSpec, apply_distortion, sample_from_pool, stage2_noise_pool
from .errors import InsufficientPretraining, NonFiniteLoss, StylemarkError
from .losses import bce_bits, dsl_loss, stage2_loss
from .metrics import bit_accuracy, mse_loss, psnr
from .networks import adain_align, channel_stats, threshold_bits
from .stylizer import AdainGenerator, adain_stylize
from .system import StylemarkSystem, WHITEBOX_NAME, build_system

logger = logging.getLogger(__name__)

LOG_EVERY = 10
FREEZE_CHECK_EVERY = 50


def set_determinism(enabled: bool) -> None:
    torch.use_deterministic_algorithms(enabled)


class MetricsLog:
    """CSV log with stable float formatting (byte-reproducible runs)."""

    COLUMNS = (
        "stage", "iteration", "loss", "bce_sty", "bce_cs", "mse", "dsl",
        "val_acc_clean", "val_acc_ast", "val_acc_pool", "val_psnr",
    )

    def __init__(self, path: str | Path | None):
        self.path = Path(path) if path is not None else None
        self.rows: list[dict] = []
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text(",".join(self.COLUMNS) + "\n")

    def append(self, **values) -> None:
        self.rows.append(values)
        if self.path is None:
            return
        cells = []
        for col in self.COLUMNS:
            v = values.get(col)
            if v is None:
                cells.append("")
            elif isinstance(v, float):
                cells.append(f"{v:.10g}")
            else:
                cells.append(str(v))
        with open(self.path, "a") as fh:
            fh.write(",".join(cells) + "\n")


@dataclass
class BootstrapResult:
    extractor_state: dict
    generator_states: dict[str, dict]
    metrics: dict = field(default_factory=dict)

    def apply_to(self, system: StylemarkSystem) -> None:
        system.extractor.load_state_dict(self.extractor_state)
        for name, state in self.generator_states.items():
            system.generators[name].load_state_dict(state)
        freeze_pretrained(system)


def freeze_pretrained(system: StylemarkSystem) -> None:
    system.extractor.requires_grad_(False)
    for gen in system.generators.values():
        gen.requires_grad_(False)


def _check_finite(loss: torch.Tensor, stage: str, iteration: int, components: dict, batch_idx) -> None:
    if not torch.isfinite(loss):
        raise NonFiniteLoss(
            f"{stage} loss non-finite at iteration {iteration}",
            diagnostics={
                "stage": stage,
                "iteration": iteration,
                "components": {k: float(v.detach()) for k, v in components.items()},
                "style_indices": [int(i) for i in np.atleast_1d(batch_idx)],
            },
        )


def _mixed_image_batch(batcher: PairBatcher, rng: np.random.Generator, batch: int) -> torch.Tensor:
    """Uniform draw over the union of style and content images."""
    pool_sty, pool_con = batcher.styles, batcher.contents
    total = len(pool_sty) + len(pool_con)
    idx = rng.integers(0, total, size=batch)
    imgs = [pool_sty[i] if i < len(pool_sty) else pool_con[i - len(pool_sty)] for i in idx]
    return torch.stack(imgs)


def bootstrap_pretrain(
    cfg: TrainingConfig,
    manifests: dict[str, DatasetManifest],
    log: MetricsLog | None = None,
) -> BootstrapResult:
    """Train the shared extractor as an autoencoder, then the stylizer
    generators with the statistics-transfer objective; everything returned
    here is frozen for the rest of the pipeline."""
    if cfg.bootstrap_ae_iters < 1 or cfg.bootstrap_gen_iters < 1:
        raise InsufficientPretraining("bootstrap iteration counts must be >= 1")
    system = build_system(cfg)
    extractor = system.extractor
    batcher = PairBatcher(manifests["train"], cfg.image_size, cfg.batch_size, cfg.seed + 101)
    rng = np.random.default_rng(cfg.seed + 103)

    # Autoencoder phase: extractor + a temporary decoder over deep features.
    torch.manual_seed(cfg.seed + 11)
    ae_decoder = AdainGenerator(cfg.channel_widths[-1], cfg.channel_widths, 1.0)
    opt = torch.optim.Adam(
        [*extractor.parameters(), *ae_decoder.parameters()],
        lr=cfg.bootstrap_lr, betas=cfg.adam_betas,
    )
    for it in range(1, cfg.bootstrap_ae_iters + 1):
        imgs = _mixed_image_batch(batcher, rng, cfg.batch_size)
        recon = ae_decoder(extractor(imgs)[-1])
        loss = mse_loss(recon, imgs)
        _check_finite(loss, "bootstrap_ae", it, {"mse": loss}, [])
        opt.zero_grad()
        loss.backward()
        opt.step()
        if log is not None and it % LOG_EVERY == 0:
            log.append(stage="bootstrap_ae", iteration=it, loss=float(loss.detach()))
    extractor.requires_grad_(False)
    extractor.eval()

    # Reconstruction quality on held-out images.
    val_batch = torch.cat([
        PairBatcher(manifests["val"], cfg.image_size, len(manifests["val"]), cfg.seed).styles,
        PairBatcher(manifests["val"], cfg.image_size, len(manifests["val"]), cfg.seed).contents,
    ])
    with torch.no_grad():
        recon = ae_decoder(extractor(val_batch)[-1])
    ae_psnr = float(np.mean([psnr(recon[i], val_batch[i]) for i in range(len(val_batch))]))
    logger.info("bootstrap autoencoder val psnr %.2f dB", ae_psnr)

    # Generator phase: main generator warm-starts from the autoencoder
    # decoder; variants train from their own seeds (and widths).
    generator_states: dict[str, dict] = {}
    gen_metrics: dict[str, float] = {"ae_val_psnr": ae_psnr}
    for name, gen in system.generators.items():
        iters = cfg.bootstrap_gen_iters if name == WHITEBOX_NAME else cfg.bootstrap_variant_iters
        if name == WHITEBOX_NAME:
            gen.load_state_dict(copy.deepcopy(ae_decoder.state_dict()))
        final = _train_generator(cfg, extractor, gen, batcher, rng, iters, name, log)
        gen.requires_grad_(False)
        gen.eval()
        generator_states[name] = copy.deepcopy(gen.state_dict())
        gen_metrics[f"gen_{name}_loss"] = final
    return BootstrapResult(
        extractor_state=copy.deepcopy(extractor.state_dict()),
        generator_states=generator_states,
        metrics=gen_metrics,
    )


def _train_generator(
    cfg: TrainingConfig,
    extractor,
    gen: AdainGenerator,
    batcher: PairBatcher,
    rng: np.random.Generator,
    iters: int,
    name: str,
    log: MetricsLog | None,
) -> float:
    opt = torch.optim.Adam(gen.parameters(), lr=cfg.bootstrap_lr, betas=cfg.adam_betas)
    final = math.nan
    for it in range(1, iters + 1):
        sty, con, idx = batcher.next_batch()
        f_sty = extractor(sty)
        t = adain_align(f_sty[-1], extractor(con)[-1])
        out = gen(t)
        f_out = extractor(out)
        content_term = mse_loss(f_out[-1], t)
        style_term = out.new_zeros(())
        for k in range(len(f_out)):
            mu_o, sig_o = channel_stats(f_out[k])
            mu_s, sig_s = channel_stats(f_sty[k])
            style_term = style_term + mse_loss(mu_o, mu_s) + mse_loss(sig_o, sig_s)
        loss = content_term + cfg.bootstrap_style_weight * style_term
        _check_finite(loss, f"bootstrap_gen_{name}", it,
                      {"content": content_term, "style": style_term}, idx)
        opt.zero_grad()
        loss.backward()
        opt.step()
        final = float(loss.detach())
        if log is not None and it % LOG_EVERY == 0:
            log.append(stage=f"bootstrap_gen_{name}", iteration=it, loss=final)
    return final


@dataclass
class ValMetrics:
    acc_clean: float
    acc_ast: float
    psnr: float
    acc_pool: float | None = None

    @property
    def stage1_score(self) -> float:
        return (self.acc_clean + self.acc_ast + self.psnr / 50.0) / 3.0


def evaluate_on_pairs(
    system: StylemarkSystem,
    styles: torch.Tensor,
    contents: torch.Tensor,
    seed: int,
    pool: list[NoiseSpec] | None = None,
    batch_size: int = 16,
) -> ValMetrics:
    """Clean/stylized decode accuracy and embedding PSNR over fixed pairs.

    Published (8-bit quantized) images feed every decode; the noise pool,
    when given, is applied to both the published and the stylized image.
    """
    rng = np.random.default_rng(seed)
    gen = system.generators[WHITEBOX_NAME]
    accs_clean, accs_ast, psnrs = [], [], []
    pool_accs = []
    with torch.no_grad():
        for start in range(0, len(styles), batch_size):
            sty = styles[start : start + batch_size]
            con = contents[start : start + batch_size]
            bits = sample_watermark_batch(rng, len(sty), system.config.watermark_length)
            i_wm = quantize_8bit(system.encoder(sty, bits))
            i_cs = quantize_8bit(adain_stylize(system.extractor, gen, i_wm, con))
            got_wm = threshold_bits(system.decoder(i_wm))
            got_cs = threshold_bits(system.decoder(i_cs))
            for i in range(len(sty)):
                accs_clean.append(bit_accuracy(got_wm[i], bits[i]))
                accs_ast.append(bit_accuracy(got_cs[i], bits[i]))
                psnrs.append(psnr(i_wm[i], sty[i]))
            if pool:
                for spec in pool:
                    wm_np = apply_distortion(spec, i_wm, rng)
                    cs_np = apply_distortion(spec, i_cs, rng)
                    got_wm_np = threshold_bits(system.decoder(wm_np))
                    got_cs_np = threshold_bits(system.decoder(cs_np))
                    for i in range(len(sty)):
                        pool_accs.append(bit_accuracy(got_wm_np[i], bits[i]))
                        pool_accs.append(bit_accuracy(got_cs_np[i], bits[i]))
    return ValMetrics(
        acc_clean=float(np.mean(accs_clean)),
        acc_ast=float(np.mean(accs_ast)),
        psnr=float(np.mean(psnrs)),
        acc_pool=float(np.mean(pool_accs)) if pool_accs else None,
    )


def _val_tensors(cfg: TrainingConfig, manifests: dict[str, DatasetManifest]):
    b = PairBatcher(manifests["val"], cfg.image_size, 1, cfg.seed)
    return b.styles, b.contents


def run_stage1(
    cfg: TrainingConfig,
    manifests: dict[str, DatasetManifest],
    bootstrap: BootstrapResult,
    log: MetricsLog | None = None,
) -> Checkpoint:
    """Joint encoder/decoder training with the white-box stylizer in loop.

    No pixel-level distortion pool participates here; robustness pressure
    comes only from the stylization path. Returns the checkpoint with the
    best composite validation score (clean Acc, stylized Acc, PSNR/50).
    """
    cfg.validate()
    system = build_system(cfg)
    bootstrap.apply_to(system)
    gen = system.generators[WHITEBOX_NAME]
    extractor = system.extractor

    params = [*system.encoder.trainable_parameters(), *system.decoder.parameters()]
    opt = torch.optim.Adam(params, lr=cfg.learning_rate, betas=cfg.adam_betas)
    batcher = PairBatcher(manifests["train"], cfg.image_size, cfg.batch_size, cfg.seed + 211)
    wm_rng = np.random.default_rng(cfg.seed + 223)
    val_styles, val_contents = _val_tensors(cfg, manifests)

    best_state = copy.deepcopy(_trainable_states(system))
    best = {"score": -math.inf, "iteration": 0}
    weights = cfg.weights

    for it in range(1, cfg.stage1_iters + 1):
        system.encoder.train()
        system.decoder.train()
        sty, con, idx = batcher.next_batch()
        bits = sample_watermark_batch(wm_rng, cfg.batch_size, cfg.watermark_length)

        i_wm = system.encoder(sty, bits)
        i_cs = adain_stylize(extractor, gen, i_wm, con)
        w_sty = system.decoder(i_wm)
        w_cs = system.decoder(i_cs)

        term_bce_sty = bce_bits(w_sty, bits)
        term_bce_cs = bce_bits(w_cs, bits)
        term_mse = mse_loss(i_wm, sty)
        term_dsl = dsl_loss(i_wm, sty, extractor) if weights.dsl != 0 else i_wm.new_zeros(())
        loss = weights.wm * (term_bce_sty + term_bce_cs) + weights.inv * (
            weights.mse * term_mse + weights.dsl * term_dsl
        )
        components = {
            "bce_sty": term_bce_sty, "bce_cs": term_bce_cs,
            "mse": term_mse, "dsl": term_dsl,
        }
        _check_finite(loss, "stage1", it, components, idx)
        opt.zero_grad()
        loss.backward()
        opt.step()

        row: dict = {}
        if it % cfg.stage1_val_every == 0 or it == cfg.stage1_iters:
            system.encoder.eval()
            system.decoder.eval()
            vm = evaluate_on_pairs(system, val_styles, val_contents, cfg.seed + 7777)
            if vm.stage1_score > best["score"]:
                best = {"score": vm.stage1_score, "iteration": it,
                        "acc_clean": vm.acc_clean, "acc_ast": vm.acc_ast, "psnr": vm.psnr}
                best_state = copy.deepcopy(_trainable_states(system))
            row = {"val_acc_clean": vm.acc_clean, "val_acc_ast": vm.acc_ast, "val_psnr": vm.psnr}
        if log is not None and (it % LOG_EVERY == 0 or row):
            log.append(stage="stage1", iteration=it, loss=float(loss.detach()),
                       bce_sty=float(term_bce_sty.detach()), bce_cs=float(term_bce_cs.detach()),
                       mse=float(term_mse.detach()), dsl=float(term_dsl.detach()), **row)

    _load_trainable_states(system, best_state)
    system.eval_mode()
    metrics = {k: v for k, v in best.items() if k != "score"} | {"score": best["score"]}
    if cfg.stage1_iters == 0:
        metrics = {"iteration": 0, "score": 0.0}
    return checkpoint_from_system(system, "stage1", best["iteration"], metrics)


def _trainable_states(system: StylemarkSystem) -> dict[str, dict]:
    return {
        "encoder": system.encoder.state_dict(),
        "decoder": system.decoder.state_dict(),
    }


def _load_trainable_states(system: StylemarkSystem, states: dict[str, dict]) -> None:
    system.encoder.load_state_dict(states["encoder"])
    system.decoder.load_state_dict(states["decoder"])


def run_stage2(
    cfg: TrainingConfig,
    stage1_ckpt: Checkpoint,
    manifests: dict[str, DatasetManifest],
    log: MetricsLog | None = None,
) -> Checkpoint:
    """Decoder-only fine-tuning under the noise pool; the embedding network
    stays byte-identical to its stage-1 parent."""
    cfg.validate()
    if cfg.stage2_iters > 0 and not stage2_noise_pool(cfg.noise_sigma_is_std):
        raise StylemarkError("stage 2 requires a nonempty noise pool")
    system = system_from_checkpoint(stage1_ckpt)
    system.encoder.requires_grad_(False)
    freeze_pretrained(system)
    encoder_ref = stage1_ckpt.encoder_array_bytes()

    gen = system.generators[WHITEBOX_NAME]
    extractor = system.extractor
    pool = stage2_noise_pool(cfg.noise_sigma_is_std)
    opt = torch.optim.Adam(system.decoder.parameters(), lr=cfg.stage2_lr, betas=cfg.adam_betas)
    batcher = PairBatcher(manifests["train"], cfg.image_size, cfg.batch_size, cfg.seed + 307)
    wm_rng = np.random.default_rng(cfg.seed + 311)
    noise_rng = np.random.default_rng(cfg.seed + 313)
    val_styles, val_contents = _val_tensors(cfg, manifests)

    ref = evaluate_on_pairs(system, val_styles, val_contents, cfg.seed + 7777, pool=pool)
    clean_floor = ref.acc_clean - 0.01
    best_state = copy.deepcopy(system.decoder.state_dict())
    best = {"acc_pool": ref.acc_pool, "acc_clean": ref.acc_clean, "iteration": 0,
            "acc_ast": ref.acc_ast, "psnr": ref.psnr}
    if log is not None:
        log.append(stage="stage2", iteration=0, val_acc_clean=ref.acc_clean,
                   val_acc_ast=ref.acc_ast, val_acc_pool=ref.acc_pool, val_psnr=ref.psnr)

    for it in range(1, cfg.stage2_iters + 1):
        system.decoder.train()
        sty, con, idx = batcher.next_batch()
        bits = sample_watermark_batch(wm_rng, cfg.batch_size, cfg.watermark_length)
        with torch.no_grad():
            i_wm = system.encoder(sty, bits)
            i_cs = adain_stylize(extractor, gen, i_wm, con)
            spec = sample_from_pool(pool, noise_rng)
            i_wm_np = apply_distortion(spec, i_wm, noise_rng)
            i_cs_np = apply_distortion(spec, i_cs, noise_rng)
        w_sty = system.decoder(i_wm)
        w_cs = system.decoder(i_cs)
        w_sty_np = system.decoder(i_wm_np)
        w_cs_np = system.decoder(i_cs_np)
        loss = stage2_loss(w_sty, w_cs, w_sty_np, w_cs_np, bits)
        _check_finite(loss, "stage2", it, {"loss": loss}, idx)
        opt.zero_grad()
        loss.backward()
        opt.step()

        if it % FREEZE_CHECK_EVERY == 0 or it == cfg.stage2_iters:
            now = checkpoint_from_system(system, "probe", it).encoder_array_bytes()
            if now != encoder_ref:
                raise StylemarkError("stage-2 mutated frozen encoder parameters")

        row: dict = {}
        if it % cfg.stage2_val_every == 0 or it == cfg.stage2_iters:
            system.decoder.eval()
            vm = evaluate_on_pairs(system, val_styles, val_contents, cfg.seed + 7777, pool=pool)
            prev_pool = best["acc_pool"] if best["acc_pool"] is not None else -1.0
            if vm.acc_pool > prev_pool and vm.acc_clean >= clean_floor:
                best = {"acc_pool": vm.acc_pool, "acc_clean": vm.acc_clean, "iteration": it,
                        "acc_ast": vm.acc_ast, "psnr": vm.psnr}
                best_state = copy.deepcopy(system.decoder.state_dict())
            row = {"val_acc_clean": vm.acc_clean, "val_acc_ast": vm.acc_ast,
                   "val_acc_pool": vm.acc_pool, "val_psnr": vm.psnr}
        if log is not None and (it % LOG_EVERY == 0 or row):
            log.append(stage="stage2", iteration=it, loss=float(loss.detach()), **row)

    system.decoder.load_state_dict(best_state)
    system.eval_mode()
    ckpt = checkpoint_from_system(system, "stage2", best["iteration"], best)
    if ckpt.encoder_array_bytes() != encoder_ref:
        raise StylemarkError("stage-2 checkpoint does not share encoder bytes with parent")
    return ckpt


@dataclass
class PipelineResult:
    manifests: dict[str, DatasetManifest]
    stage1: Checkpoint
    stage2: Checkpoint | None
    paths: dict[str, Path] = field(default_factory=dict)


def train_pipeline(
    cfg: TrainingConfig,
    style_dir: str | Path,
    content_dir: str | Path,
    out_dir: str | Path,
) -> PipelineResult:
    """Bootstrap, stage 1, stage 2 (if configured), with artifacts on disk."""
    cfg.validate()
    set_determinism(cfg.deterministic)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifests = build_manifest(style_dir, content_dir, cfg.counts, cfg.seed)
    for split, manifest in manifests.items():
        manifest.save(out / f"manifest_{split}.json")
    log = MetricsLog(out / "metrics.csv")

    bootstrap = bootstrap_pretrain(cfg, manifests, log)
    stage1 = run_stage1(cfg, manifests, bootstrap, log)
    paths = {"stage1": out / "stage1.ckpt", "metrics": out / "metrics.csv"}
    save_checkpoint(stage1, paths["stage1"])

    stage2 = None
    if cfg.stage2_iters > 0:
        stage2 = run_stage2(cfg, stage1, manifests, log)
        paths["stage2"] = out / "stage2.ckpt"
        save_checkpoint(stage2, paths["stage2"])
    cfg.save(out / "config.json")
    return PipelineResult(manifests=manifests, stage1=stage1, stage2=stage2, paths=paths)
