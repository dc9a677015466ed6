"""Training loop: PK-sampled batches, Adam updates, milestone lr decay.

A run is fully determined by its resolved config + seed; the manifest
records both plus everything derived at build time (stage geometry,
capped spatial levels, kernel backend, parameter counts), so identical
manifests reproduce byte-identical loss logs and eval reports.
"""

from __future__ import annotations

import json
import os

import numpy as np

from . import config as cfgmod
from . import kernels
from .data import synth_generate
from .evaluation import RetrievalProtocol, distance_matrix, evaluate
from .losses import Batch, loss_components
from .model import ModelConfig, ToyBackbone, extract_features
from .tensor import Tensor, active_tape, backward


class Adam:
    def __init__(self, named_params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = [t for _, t in named_params]
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros(t.shape) for t in self.params]
        self.v = [np.zeros(t.shape) for t in self.params]
        self.t = 0

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        self.t += 1
        b1c = 1 - self.beta1**self.t
        b2c = 1 - self.beta2**self.t
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * p.grad
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * p.grad**2
            p.data = p.data - self.lr * (self.m[i] / b1c) / (
                np.sqrt(self.v[i] / b2c) + self.eps
            )


def lr_at(epoch, base_lr, milestones):
    return base_lr * 0.1 ** sum(1 for m in milestones if epoch >= m)


class PKSampler:
    """Batches of P identities x K images, reshuffled each epoch."""

    def __init__(self, labels, p, k):
        self.labels = np.asarray(labels)
        self.p = p
        self.k = k
        self.by_id = {ident: np.where(self.labels == ident)[0] for ident in np.unique(self.labels)}

    def epoch_batches(self, rng):
        idents = rng.permutation(sorted(self.by_id))
        batches = []
        for start in range(0, len(idents) - self.p + 1, self.p):
            batch = []
            for ident in idents[start : start + self.p]:
                pool = self.by_id[ident]
                if len(pool) >= self.k:
                    pick = rng.choice(pool, size=self.k, replace=False)
                else:
                    pick = rng.choice(pool, size=self.k, replace=True)
                batch.extend(int(i) for i in pick)
            batches.append(np.array(batch))
        return batches


def build_manifest(cfg, model: ToyBackbone, extra=None):
    manifest = {
        "config": {k: v for k, v in sorted(cfg.items())},
        "kernel_backend": kernels.BACKEND,
        "stage_shapes": [list(s) for s in model.stage_shapes],
        "spatial_level_caps": [
            {"stage": s, "configured": c, "effective": e} for s, c, e in model.level_caps
        ],
        "param_count": int(sum(t.size for _, t in model.parameters())),
        "pyramid_param_count": int(model.pyramid_param_count()),
    }
    if extra:
        manifest.update(extra)
    return manifest


def _snapshot_eval(model, dataset, cfg):
    q = extract_features(dataset.query.images, model, cfg["eval.flip_average"]).data
    g = extract_features(dataset.gallery.images, model, cfg["eval.flip_average"]).data
    dist = distance_matrix(q, g, cfg["eval.metric"])
    report = evaluate(
        dist,
        dataset.query.ids,
        dataset.gallery.ids,
        dataset.query.cams,
        dataset.gallery.cams,
        RetrievalProtocol(metric=cfg["eval.metric"]),
    )
    return report


def train_run(cfg, out_dir, dataset=None):
    """Train per config into out_dir; returns the final eval report."""
    os.makedirs(out_dir, exist_ok=True)
    seed = cfg["seed"]
    if dataset is None:
        dataset = synth_generate(cfgmod.data_spec(cfg), seed)
    model = ToyBackbone(
        ModelConfig(
            num_classes=dataset.num_classes,
            pyramid=cfgmod.pyramid_config(cfg),
            image_height=cfg["data.image_height"],
            image_width=cfg["data.image_width"],
            seed=seed,
        )
    )
    losscfg = cfgmod.loss_config(cfg)
    optim = Adam(model.parameters(), lr=cfg["optim.lr"])
    sampler = PKSampler(dataset.train.ids, cfg["batch.p"], cfg["batch.k"])

    manifest = build_manifest(cfg, model)
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)

    tape = active_tape()
    step = 0
    loss_log = open(os.path.join(out_dir, "loss_log.jsonl"), "w")
    epoch_log = open(os.path.join(out_dir, "epochs.jsonl"), "w")
    try:
        for epoch in range(cfg["optim.epochs"]):
            optim.lr = lr_at(epoch, cfg["optim.lr"], cfg["optim.milestones"])
            rng = np.random.default_rng(np.random.SeedSequence((seed, 0xBA7C, epoch)))
            epoch_losses = []
            for idx in sampler.epoch_batches(rng):
                images = Tensor(dataset.train.images[idx])
                labels = dataset.train.ids[idx]
                emb, logits = model.forward(images, train=True)
                l_cls, l_tri, l_total = loss_components(
                    Batch(emb, logits, labels), losscfg
                )
                optim.zero_grad()
                backward(l_total)
                optim.step()
                tape.clear()
                line = {
                    "step": step,
                    "l_cls": l_cls.item(),
                    "l_tri": l_tri.item(),
                    "l_total": l_total.item(),
                }
                loss_log.write(json.dumps(line) + "\n")
                epoch_losses.append(line["l_total"])
                step += 1
            entry = {
                "epoch": epoch,
                "lr": optim.lr,
                "l_total_mean": float(np.mean(epoch_losses)),
            }
            every = cfg["eval.every"]
            if every and (epoch % every == 0 or epoch == cfg["optim.epochs"] - 1):
                report = _snapshot_eval(model, dataset, cfg)
                entry["eval"] = {"map": report.map, "r1": report.cmc_at(1)}
            epoch_log.write(json.dumps(entry) + "\n")
    finally:
        loss_log.close()
        epoch_log.close()

    model.save(os.path.join(out_dir, "checkpoint"))
    final = _snapshot_eval(model, dataset, cfg)
    with open(os.path.join(out_dir, "eval_report.json"), "w") as fh:
        json.dump(final.to_json_dict(), fh, indent=2, sort_keys=True)
    return final, model, dataset
