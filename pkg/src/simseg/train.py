"""Two-step training, pseudo-labelling, evaluation and ablation driver."""

import csv
import io
import os
from dataclasses import dataclass, field

import numpy as np

from . import container
from .banks import InstanceBank, SampleBank, StuffBank
from .config import TrainConfig, parse_config
from .labels import DONT_CARE, augment_label_map, correct_label_map
from .losses import (adv_loss, disc_loss, instance_loss, seg_loss, step1_total,
                     step2_total, stuff_loss)
from .metrics import score
from .nets import (AdamState, SGDState, adam_step, make_discriminator,
                   make_extractor, make_head, sgd_poly_step)
from .numerics import argmax_channel, softmax_channel
from .pooling import stuff_repr
from .pseudo import confidence_pass, pseudo_labels, select_thresholds

LOSS_COLUMNS = ["iteration", "seg_s", "seg_t", "adv", "d", "stf", "ins", "total"]


@dataclass
class Model:
    F: object
    C: object
    D: object
    opt_g: SGDState
    opt_d: AdamState
    stuff_bank: StuffBank
    instance_bank: InstanceBank
    iteration: int = 0

    def logits(self, image):
        return self.C.forward(self.F.forward(image))

    def predict(self, image):
        return argmax_channel(self.logits(image))


@dataclass
class EvalReport:
    iou: np.ndarray
    miou: float
    iteration: int
    fingerprint: str


@dataclass
class TrainResult:
    model: Model
    losses: list
    curve: list = field(default_factory=list)


def build_model(cfg):
    """Fresh networks, optimizers and empty banks, all seeded by ``cfg.seed``."""
    rng = np.random.default_rng([cfg.seed, 1])
    F = make_extractor(rng, 3, cfg.channels)
    C = make_head(rng, cfg.channels, cfg.num_classes)
    D = make_discriminator(rng, cfg.num_classes)
    return Model(
        F, C, D,
        SGDState(cfg.lr_g, cfg.momentum, cfg.weight_decay, cfg.power),
        AdamState(cfg.lr_d, power=cfg.power),
        StuffBank(cfg.stuff, cfg.w, cfg.channels),
        InstanceBank(cfg.things, cfg.w, cfg.channels, z=cfg.z),
    )


def softmax_backward(prob, grad_prob):
    return prob * (grad_prob - (prob * grad_prob).sum(axis=0, keepdims=True))


def _add(grads, new):
    for k, v in new.items():
        grads[k] = grads[k] + v if k in grads else v


def _eval_iterations(cfg):
    n = cfg.iterations
    return sorted({max(1, round(n * k / cfg.eval_points)) for k in range(1, cfg.eval_points + 1)})


def train(cfg, source, target_images, pseudo=None, eval_set=None):
    """Run one training step from freshly initialised parameters and banks.

    With ``pseudo`` given, the target pseudo-label loss is added and the
    matching losses pool over pseudo-augmented predictions.

    ``target_images`` is a list of target images; target ground truth is never
    consulted. ``eval_set`` (images, labels) is only used for the mIoU curve.
    """
    if not source.images or not target_images:
        raise ValueError("training needs non-empty source and target sets")
    if pseudo is not None and len(pseudo) != len(target_images):
        raise ValueError("need one pseudo-label map per target image")
    model = build_model(cfg)
    wts = cfg.weights
    order_rng = np.random.default_rng([cfg.seed, 2])
    ns, nt = len(source.images), len(target_images)
    perm_s, perm_t = order_rng.permutation(ns), order_rng.permutation(nt)
    use_target = cfg.aa or cfg.sim or pseudo is not None
    checkpoints = set(_eval_iterations(cfg)) if eval_set is not None else set()
    F, C, D = model.F, model.C, model.D
    params_g = {**{"F." + k: v for k, v in F.params().items()},
                **{"C." + k: v for k, v in C.params().items()}}
    losses, curve = [], []
    T = cfg.iterations

    for t in range(T):
        if t and t % ns == 0:
            perm_s = order_rng.permutation(ns)
        if t and t % nt == 0:
            perm_t = order_rng.permutation(nt)
        i, j = perm_s[t % ns], perm_t[t % nt]
        xs, ys = source.images[i], source.labels[i]
        grads = {}
        parts = {}

        # source: supervised loss, then harvest bank samples
        fs = F.forward(xs)
        zs = C.forward(fs)
        ps = softmax_channel(zs)
        parts["seg_s"] = seg_loss(zs, ys)
        gf, gc = C.backward(wts.seg * parts["seg_s"].grad)
        _, gF = F.backward(gf)
        _add(grads, {"C." + k: v for k, v in gc.items()})
        _add(grads, {"F." + k: v for k, v in gF.items()})
        if cfg.sim:
            correct = correct_label_map(ys, argmax_channel(zs))
            for b in model.stuff_bank.class_ids:
                pooled = stuff_repr(correct, fs, b)
                if pooled is not None:
                    model.stuff_bank.insert(b, pooled.vector)
            model.instance_bank.harvest(correct, fs)

        pt = None
        if use_target:
            xt = target_images[j]
            ft = F.forward(xt)
            zt = C.forward(ft)
            pt = softmax_channel(zt)
            g_zt = np.zeros_like(zt)
            g_ft = np.zeros_like(ft)
            match_labels = argmax_channel(zt)
            if pseudo is not None:
                parts["seg_t"] = seg_loss(zt, pseudo[j])
                g_zt += wts.seg * parts["seg_t"].grad
                match_labels = augment_label_map(match_labels, pseudo[j])
            if cfg.aa:
                parts["adv"] = adv_loss(D.forward(pt))
                gp, _ = D.backward(wts.adv * parts["adv"].grad)
                g_zt += softmax_backward(pt, gp)
            if cfg.sim:
                parts["stf"] = stuff_loss(match_labels, ft, model.stuff_bank)
                parts["ins"] = instance_loss(match_labels, ft, model.instance_bank,
                                             cfg.instance_cap)
                g_ft += wts.ci * (parts["stf"].grad + parts["ins"].grad)
            gf, gc = C.backward(g_zt)
            _, gF = F.backward(gf + g_ft)
            _add(grads, {"C." + k: v for k, v in gc.items()})
            _add(grads, {"F." + k: v for k, v in gF.items()})

        sgd_poly_step(model.opt_g, params_g, grads, t, T)

        if cfg.aa:
            d_t = D.forward(pt)
            d_s = D.forward(ps)
            parts["d"] = disc_loss(d_s, d_t)
            g = parts["d"].grad
            _, g_src = D.backward(wts.d * g["src"])
            D.forward(pt)
            _, g_tgt = D.backward(wts.d * g["tgt"])
            _add(g_src, g_tgt)
            adam_step(model.opt_d, D.params(), g_src, t + 1, T)

        row = [t] + [_val(parts, k) for k in LOSS_COLUMNS[1:-1]]
        losses.append(row + [loss_total(row, wts, pseudo is not None)])
        model.iteration = t + 1
        if model.iteration in checkpoints:
            rep = evaluate(model, eval_set, cfg)
            curve.append((model.iteration, rep.miou))
    return TrainResult(model, losses, curve)


def train_step1(cfg, source, target_images, eval_set=None):
    return train(cfg, source, target_images, None, eval_set)


def train_step2(cfg, source, target_images, pseudo, eval_set=None):
    """Retrain from scratch with pseudo labels; banks start empty again."""
    if pseudo is None:
        raise ValueError("step 2 needs pseudo labels")
    return train(cfg, source, target_images, list(pseudo), eval_set)


def _val(parts, key):
    p = parts.get(key)
    return 0.0 if p is None else float(p.value)


def loss_total(row, weights, step2):
    """Recompute the generator objective from a logged loss row."""
    comp = dict(zip(LOSS_COLUMNS, row))
    names = ["seg_s", "adv", "stf", "ins"] + (["seg_t"] if step2 else [])
    parts = {k: comp[k] for k in names}
    fn = step2_total if step2 else step1_total
    return fn(parts, weights).value


# pseudo labels and evaluation


def make_pseudo_labels(model, target_images):
    if not target_images:
        raise ValueError("empty target set")
    logits = [model.logits(x) for x in target_images]
    thresholds = select_thresholds(confidence_pass(logits, model.C.layers[0].c_out))
    return [pseudo_labels(z, thresholds) for z in logits], thresholds


def evaluate(model, eval_set, cfg=None):
    images, labels = eval_set.images, eval_set.labels
    if not images:
        raise ValueError("empty evaluation set")
    if labels is None:
        raise ValueError("evaluation set has no labels")
    cm = score([model.predict(x) for x in images], labels, model.C.layers[0].c_out)
    return EvalReport(cm.iou(), cm.miou(), model.iteration,
                      cfg.fingerprint() if cfg is not None else "")


# checkpoints


def checkpoint_entries(model, cfg):
    entries = {}
    for tag, net in (("F", model.F), ("C", model.C), ("D", model.D)):
        for k, v in net.params().items():
            entries[f"{tag}/{k}"] = v
    for k in sorted(model.opt_g.buffers):
        entries[f"opt_g/momentum/{k}"] = model.opt_g.buffers[k]
    for k in sorted(model.opt_d.m):
        entries[f"opt_d/m/{k}"] = model.opt_d.m[k]
        entries[f"opt_d/v/{k}"] = model.opt_d.v[k]
    entries["iteration"] = np.array([float(model.iteration)])
    entries["config"] = np.frombuffer(cfg.dumps().encode(), dtype=np.uint8)
    entries["bank/stuff"] = np.frombuffer(model.stuff_bank.to_bytes(), dtype=np.uint8)
    entries["bank/instance"] = np.frombuffer(model.instance_bank.to_bytes(), dtype=np.uint8)
    return entries


def save_checkpoint(path, model, cfg):
    container.save_archive(path, checkpoint_entries(model, cfg))


def load_checkpoint(path):
    if not os.path.exists(path):
        raise FileNotFoundError(f"no checkpoint at {path}")
    entries = container.load_archive(path)
    cfg = parse_config(entries["config"].tobytes().decode())
    model = build_model(cfg)
    for tag, net in (("F", model.F), ("C", model.C), ("D", model.D)):
        net.load_state({k.split("/", 1)[1]: v for k, v in entries.items()
                        if k.startswith(tag + "/")})
    for k, v in entries.items():
        if k.startswith("opt_g/momentum/"):
            model.opt_g.buffers[k[len("opt_g/momentum/"):]] = v
        elif k.startswith("opt_d/m/"):
            model.opt_d.m[k[len("opt_d/m/"):]] = v
        elif k.startswith("opt_d/v/"):
            model.opt_d.v[k[len("opt_d/v/"):]] = v
    model.iteration = int(entries["iteration"][0])
    model.stuff_bank = SampleBank.from_bytes(entries["bank/stuff"].tobytes())
    model.instance_bank = SampleBank.from_bytes(entries["bank/instance"].tobytes())
    return model, cfg


def write_losses(path, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(LOSS_COLUMNS)
        for row in rows:
            w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])


def read_losses(path):
    with open(path, newline="") as f:
        r = csv.reader(f)
        header = next(r)
        if header != LOSS_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {header}")
        return [[int(row[0])] + [float(v) for v in row[1:]] for row in r]


def write_curve(path, curve):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["iteration", "miou"])
        for it, m in curve:
            w.writerow([it, repr(float(m))])


def write_run(out_dir, result, cfg):
    """Checkpoint, banks, loss log and mIoU curve for one training step."""
    os.makedirs(out_dir, exist_ok=True)
    save_checkpoint(os.path.join(out_dir, "checkpoint.simt"), result.model, cfg)
    result.model.stuff_bank.save(os.path.join(out_dir, "stuff_bank.simt"))
    result.model.instance_bank.save(os.path.join(out_dir, "instance_bank.simt"))
    write_losses(os.path.join(out_dir, "losses.csv"), result.losses)
    if result.curve:
        write_curve(os.path.join(out_dir, "curve.csv"), result.curve)
    with open(os.path.join(out_dir, "config.txt"), "w") as f:
        f.write(cfg.dumps())


# ablation

ABLATION_ROWS = ("source_only", "aa", "aa_sim", "aa_sim_ssl", "target_only")


def row_config(cfg, row):
    toggles = {
        "source_only": dict(aa=False, sim=False, ssl=False),
        "aa": dict(aa=True, sim=False, ssl=False),
        "aa_sim": dict(aa=True, sim=True, ssl=False),
        "aa_sim_ssl": dict(aa=True, sim=True, ssl=True),
        "target_only": dict(aa=False, sim=False, ssl=False),
    }
    if row not in toggles:
        raise ValueError(f"unknown ablation row {row!r}")
    return cfg.replace(**toggles[row])


def run_seed(cfg, source, target, eval_set, rows=ABLATION_ROWS, out_dir=None):
    """Every requested ablation row at ``cfg.seed``; returns {row: (report, result)}.

    ``target`` carries target ground truth, which is read only by the
    target-only oracle row.
    """
    out = {}
    step1 = {}

    def _run(name, c, pseudo=None):
        res = train(c, source, target.images, pseudo, eval_set)
        rep = evaluate(res.model, eval_set, c)
        if out_dir:
            write_run(os.path.join(out_dir, f"seed{c.seed}", name), res, c)
        return rep, res

    for row in rows:
        c = row_config(cfg, row)
        if row == "aa_sim_ssl":
            if "aa_sim" not in step1:
                step1["aa_sim"] = _run("aa_sim", row_config(cfg, "aa_sim"))[1]
            pseudo, _ = make_pseudo_labels(step1["aa_sim"].model, target.images)
            out[row] = _run(row, c, pseudo)
        elif row == "target_only":
            out[row] = _run(row, c, list(target.labels))
        else:
            out[row] = _run(row, c)
            step1[row] = out[row][1]
    return out


def run_ablation(cfg, source, target, eval_set, seeds=(0, 1, 2), rows=ABLATION_ROWS,
                 out_dir=None):
    """Table of (row, seed, mIoU in points); written to ``ablation.csv`` if
    ``out_dir`` is given."""
    for row in rows:
        row_config(cfg, row)
    table = []
    for seed in seeds:
        res = run_seed(cfg.replace(seed=seed), source, target, eval_set, rows, out_dir)
        for row in rows:
            table.append((row, seed, 100.0 * res[row][0].miou))
    if out_dir:
        write_ablation(os.path.join(out_dir, "ablation.csv"), table)
    return table


def write_ablation(path, table):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["row", "seed", "miou"])
        for row, seed, m in table:
            w.writerow([row, seed, f"{m:.4f}"])


def mean_by_row(table):
    out = {}
    for row, _, m in table:
        out.setdefault(row, []).append(m)
    return {k: float(np.mean(v)) for k, v in out.items()}
