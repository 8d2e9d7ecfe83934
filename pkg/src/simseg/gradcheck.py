"""Central finite-difference checks for every loss and the network stack."""

import numpy as np

from .banks import InstanceBank, StuffBank
from .labels import DONT_CARE, connected_regions
from .losses import adv_loss, disc_loss, instance_loss, seg_loss, stuff_loss
from .nets import Conv2d, make_discriminator, make_extractor, make_head
from .numerics import softmax_channel
from .pooling import masked_mean

H = 1e-6


def rel_error(analytic, numeric):
    a, n = np.ravel(analytic), np.ravel(numeric)
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    return 0.0 if scale == 0.0 else float(np.linalg.norm(a - n) / scale)


def fd_grad(fn, x, coords=None, h=H):
    """Central differences of scalar ``fn`` at ``x`` (perturbed in place)."""
    coords = list(np.ndindex(x.shape)) if coords is None else coords
    out = np.empty(len(coords))
    for i, c in enumerate(coords):
        old = x[c]
        x[c] = old + h
        up = fn()
        x[c] = old - h
        down = fn()
        x[c] = old
        out[i] = (up - down) / (2 * h)
    return out


def _sample_coords(rng, shape, count):
    flat = rng.choice(int(np.prod(shape)), size=min(count, int(np.prod(shape))), replace=False)
    return [np.unravel_index(int(i), shape) for i in flat]


def check_seg(rng, with_dont_care=False):
    n, hh, ww = 3, 4, 4
    z = rng.normal(0, 2, (n, hh, ww))
    y = rng.integers(0, n, (hh, ww)).astype(np.uint8)
    if with_dont_care:
        y[rng.random((hh, ww)) < 0.4] = DONT_CARE
        y[0, 0] = 0
    res = seg_loss(z, y)
    num = fd_grad(lambda: seg_loss(z, y).value, z)
    return rel_error(res.grad, num)


def check_adv(rng):
    d = rng.uniform(0.05, 0.95, (1, 4, 4))
    num = fd_grad(lambda: adv_loss(d).value, d)
    return rel_error(adv_loss(d).grad, num)


def check_disc(rng):
    s = rng.uniform(0.05, 0.95, (1, 4, 4))
    t = rng.uniform(0.05, 0.95, (1, 4, 4))
    res = disc_loss(s, t)
    ns = fd_grad(lambda: disc_loss(s, t).value, s)
    nt = fd_grad(lambda: disc_loss(s, t).value, t)
    return rel_error(np.concatenate([res.grad["src"].ravel(), res.grad["tgt"].ravel()]),
                     np.concatenate([ns, nt]))


def _margin(vec, rows):
    """Smallest distance to a kink: |component| of the residual and the gap
    between the best and second-best slot."""
    d = np.abs(rows - vec).sum(axis=1)
    j = int(np.argmin(d))
    gap = np.inf if len(d) < 2 else np.partition(d, 1)[1] - d[j]
    return min(gap, np.abs(vec - rows[j]).min())


def check_stuff(rng, tol=1e-3):
    """Returns None for configurations too close to a subgradient point."""
    c, hh, ww = 4, 6, 6
    f = rng.normal(0, 1, (c, hh, ww))
    labels = rng.integers(0, 4, (hh, ww)).astype(np.uint8)
    bank = StuffBank((0, 1), 3, c)
    for b in (0, 1):
        for _ in range(3):
            bank.insert(b, rng.normal(0, 0.5, c))
    for b in (0, 1):
        mask = labels == b
        if mask.any() and _margin(masked_mean(mask, f)[0], bank.valid(b)) < tol:
            return None
    res = stuff_loss(labels, f, bank)
    num = fd_grad(lambda: stuff_loss(labels, f, bank).value, f)
    return rel_error(res.grad, num)


def check_instance(rng, tol=1e-3):
    c, hh, ww = 4, 6, 6
    f = rng.normal(0, 1, (c, hh, ww))
    labels = np.zeros((hh, ww), dtype=np.uint8)
    labels[rng.random((hh, ww)) < 0.35] = 3
    labels[rng.random((hh, ww)) < 0.15] = 4
    bank = InstanceBank((3, 4), 2, c, z=2)
    for k in (3, 4):
        for _ in range(4):
            bank._write(k, rng.normal(0, 0.5, c))
    for k in (3, 4):
        for r in connected_regions(labels, k)[:10]:
            if _margin(masked_mean(r.mask, f)[0], bank.valid(k)) < tol:
                return None
    res = instance_loss(labels, f, bank, cap=10)
    num = fd_grad(lambda: instance_loss(labels, f, bank, cap=10).value, f)
    return rel_error(res.grad, num)


def _min_preactivation(net, x):
    """Smallest |input| seen by any non-linearity in ``net``."""
    m = np.inf
    for layer in net.layers:
        if not isinstance(layer, Conv2d):
            m = min(m, float(np.abs(x).min()))
        x, _ = layer.forward(x)
    return m


def check_seg_network(rng, n_coords=12, tol=1e-5):
    """F -> C -> cross entropy, gradient w.r.t. sampled parameters of F and C."""
    F = make_extractor(rng, 3, 16)
    C = make_head(rng, 16, 6)
    for net in (F, C):
        for k, p in net.params().items():
            if k.endswith("bias"):
                p[...] = rng.normal(0, 0.1, p.shape)
    x = rng.normal(0, 1, (3, 8, 8))
    y = rng.integers(0, 6, (8, 8)).astype(np.uint8)
    if _min_preactivation(F, x) < tol:
        return None
    feats = F.forward(x)
    res = seg_loss(C.forward(feats), y)
    gf, gc = C.backward(res.grad)
    _, gF = F.backward(gf)
    analytic, numeric = [], []

    def loss():
        return seg_loss(C.forward(F.forward(x)), y).value

    for net, grads in ((F, gF), (C, gc)):
        for name, p in net.params().items():
            coords = _sample_coords(rng, p.shape, n_coords)
            analytic += [grads[name][c] for c in coords]
            numeric += list(fd_grad(loss, p, coords))
    return rel_error(np.array(analytic), np.array(numeric))


def check_disc_network(rng, n_coords=12, tol=1e-5):
    """softmax -> D -> adversarial and discriminator losses: gradients w.r.t.
    sampled D parameters and the generator logits."""
    D = make_discriminator(rng, 6)
    for k, p in D.params().items():
        if k.endswith("bias"):
            p[...] = rng.normal(0, 0.1, p.shape)
    zs = rng.normal(0, 1, (6, 8, 8))
    zt = rng.normal(0, 1, (6, 8, 8))
    ps, pt = softmax_channel(zs), softmax_channel(zt)
    if min(_min_preactivation(D, ps), _min_preactivation(D, pt)) < tol:
        return None
    # discriminator loss w.r.t. D parameters
    dl = disc_loss(D.forward(ps), D.forward(pt))
    D.forward(ps)
    _, g_src = D.backward(dl.grad["src"])
    D.forward(pt)
    _, g_tgt = D.backward(dl.grad["tgt"])

    def d_value():
        return disc_loss(D.forward(ps), D.forward(pt)).value

    analytic, numeric = [], []
    for name, p in D.params().items():
        coords = _sample_coords(rng, p.shape, n_coords)
        analytic += [g_src[name][c] + g_tgt[name][c] for c in coords]
        numeric += list(fd_grad(d_value, p, coords))
    # adversarial loss w.r.t. target logits through softmax and D
    adv = adv_loss(D.forward(pt))
    gp, _ = D.backward(adv.grad)
    gz = pt * (gp - (pt * gp).sum(axis=0, keepdims=True))
    coords = _sample_coords(rng, zt.shape, n_coords)
    analytic += [gz[c] for c in coords]
    numeric += list(fd_grad(lambda: adv_loss(D.forward(softmax_channel(zt))).value, zt, coords))
    return rel_error(np.array(analytic), np.array(numeric))


CHECKS = {
    "seg_source": (lambda rng: check_seg(rng), 1e-5),
    "adv": (check_adv, 1e-5),
    "disc": (check_disc, 1e-5),
    "stuff": (check_stuff, 1e-5),
    "instance": (check_instance, 1e-5),
    "seg_target": (lambda rng: check_seg(rng, with_dont_care=True), 1e-5),
    "network_seg": (check_seg_network, 1e-4),
    "network_disc": (check_disc_network, 1e-4),
}


def run_suite(count=100, seed=0, names=None):
    """Run ``count`` accepted configurations per check.

    Returns {name: (max relative error, tolerance, accepted, rejected)}.
    """
    out = {}
    for name in names or CHECKS:
        fn, tol = CHECKS[name]
        rng = np.random.default_rng([seed, sorted(CHECKS).index(name)])
        errs, rejected = [], 0
        while len(errs) < count:
            e = fn(rng)
            if e is None:
                rejected += 1
                if rejected > 20 * count:
                    raise RuntimeError(f"{name}: could not find non-tie configurations")
                continue
            errs.append(e)
        out[name] = (max(errs), tol, len(errs), rejected)
    return out
