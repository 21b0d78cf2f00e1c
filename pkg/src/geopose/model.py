"""End-to-end network: embedding -> encoder -> pooled feature -> pose head,
plus the training loop and split evaluation."""

from __future__ import annotations

import csv
import time

import numpy as np

from . import tensor as T
from .data import get_model
from .embed import EmbedNet, EmbedPlan, _Stage
from .encoder import EncoderNet, global_pool
from .geometry import RigidTransform, barycenter, quat_to_rot, random_quat
from .metrics import MetricReport, add, adds
from .params import Adam, ParamStore
from .pose_head import PoseEstimate, PoseHead, pose_loss


class TrainingDiverged(RuntimeError):
    pass


class PoseNet:
    def __init__(self, cfg, params=None):
        cfg.validate()
        self.cfg = cfg
        self.params = params if params is not None else ParamStore(cfg.seed)
        self.embed_net = EmbedNet(cfg.embed, self.params,
                                  gcn=cfg.ablation.gcn_block == "gcn")
        self.encoder_net = EncoderNet(cfg.encoder, self.params,
                                      geometry_aware=cfg.ablation.geometry_aware == "on")
        self.head = PoseHead(cfg.encoder.d_in, cfg.head_widths, self.params)
        self._plan_cache = {}

    def plan_for(self, sample):
        """Cache the geometry-only precompute per sample id (fixed across steps)."""
        key = sample.id
        cached = self._plan_cache.get(key)
        if cached is None:
            cached = (self.embed_net.plan(sample.cloud, sample.normals, seed=self.cfg.seed),
                      barycenter(sample.cloud))
            self._plan_cache[key] = cached
        return cached

    def forward(self, cloud, normals, plan=None, bary=None, train=False):
        """Returns (q Tensor[4], t_hat Tensor[3])."""
        if plan is None:
            plan = self.embed_net.plan(cloud, normals, seed=self.cfg.seed)
        if bary is None:
            bary = barycenter(cloud)
        emb = self.embed_net.forward(plan, train=train)
        tokens = self.encoder_net.encode(emb.features)
        feat = global_pool(tokens)
        return self.head.forward(feat, bary)

    def predict(self, sample):
        plan, bary = self.plan_for(sample)
        q, t_hat = self.forward(sample.cloud, sample.normals, plan=plan, bary=bary)
        return PoseEstimate(q.data.copy(), t_hat.data.copy())

    def sample_loss(self, sample, model, train=False, rot_aug=None):
        plan, bary = self.plan_for(sample)
        gt = sample.gt
        if rot_aug is not None:
            plan, bary, gt = _rotate_instance(plan, bary, gt, rot_aug)
        q, t_hat = self.forward(sample.cloud, sample.normals, plan=plan, bary=bary,
                                train=train)
        return pose_loss(q, t_hat, gt, model.vertices, model.symmetric,
                         self.cfg.train.n_loss_points)

    def train_step(self, batch, model, opt, rot_augs=None):
        """Mean batch loss, backward, one optimizer step. Returns the loss value."""
        if rot_augs is None:
            rot_augs = [None] * len(batch)
        losses = [self.sample_loss(s, model, train=True, rot_aug=r)
                  for s, r in zip(batch, rot_augs)]
        total = losses[0]
        for ls in losses[1:]:
            total = total + ls
        total = total * T.Tensor(1.0 / len(losses))
        value = float(total.data)
        T.backward(total)
        opt.step(self.params)
        return value


def _rotate_instance(plan, bary, gt, R_a):
    """Rotate a cached geometry plan and its ground truth by R_a about the
    cloud barycenter (so the scene stays in place).

    PPF values and FPS/K-NN selections are rotation-invariant, so rotating the
    stored edge offsets and centers reproduces the plan of the rotated cloud;
    this makes pose augmentation nearly free during training.
    """
    def spin(pts):
        return (pts - bary) @ R_a.T + bary

    stages = []
    for st in plan.stages:
        edge = st.edge_const.copy()
        edge[:, :, 4:7] = edge[:, :, 4:7] @ R_a.T
        stages.append(_Stage(st.nbr_idx, edge, spin(st.centers), st.down_idx))
    rplan = EmbedPlan(stages, spin(plan.final_centers))
    rgt = RigidTransform(R_a @ gt.R, R_a @ (gt.t - bary) + bary)
    return rplan, bary, rgt


def train(cfg, train_samples, log_path=None, progress=None):
    """Train a PoseNet on the given samples; returns (net, loss history)."""
    model = get_model(cfg.model)
    net = PoseNet(cfg)
    opt = Adam(lr=cfg.train.lr, total_steps=cfg.train.steps)
    rng = np.random.default_rng(cfg.seed)
    history = []
    log = None
    writer = None
    if log_path is not None:
        log = open(log_path, "w", newline="")
        writer = csv.writer(log)
        writer.writerow(["step", "loss", "wall_ms"])
    try:
        for step in range(cfg.train.steps):
            t0 = time.perf_counter()
            idx = rng.choice(len(train_samples), size=min(cfg.train.batch, len(train_samples)),
                             replace=False)
            batch = [train_samples[i] for i in idx]
            augs = None
            if cfg.train.augment:
                augs = [quat_to_rot(random_quat(rng)) for _ in batch]
            loss = net.train_step(batch, model, opt, rot_augs=augs)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at step {step}")
            history.append(loss)
            if writer is not None:
                writer.writerow([step, repr(loss), round((time.perf_counter() - t0) * 1e3, 3)])
            if progress is not None:
                progress(step, loss)
    finally:
        if log is not None:
            log.close()
    return net, history


def evaluate(net, samples, model):
    add_m, adds_m, ids = [], [], []
    for s in samples:
        pred = net.predict(s)
        add_m.append(add(pred, s.gt, model))
        adds_m.append(adds(pred, s.gt, model))
        ids.append(s.id)
    return MetricReport(ids, add_m, adds_m, model.diameter, model.symmetric)


def evaluate_oracle(samples, model):
    """Ground-truth-as-prediction reference evaluation."""
    add_m, adds_m, ids = [], [], []
    for s in samples:
        pred = PoseEstimate(s.q.copy(), s.t.copy())
        add_m.append(add(pred, s.gt, model))
        adds_m.append(adds(pred, s.gt, model))
        ids.append(s.id)
    return MetricReport(ids, add_m, adds_m, model.diameter, model.symmetric)
