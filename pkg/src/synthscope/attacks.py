"""Adversarial attack suite operating through the classifier contract.

White-box attacks need a model exposing ``loss_and_grad(img, y)`` (the
margin-form attack loss and its pixel gradient) and/or
``decision_and_grad(img)``; decision-based attacks need only ``predict``.
The built-in reference classifier satisfies all three with closed-form
gradients, which the test suite exploits for exact identities.

All stochastic attacks draw from a generator seeded by the config and are
byte-reproducible.  Norm-bounded attacks keep every returned image inside
the epsilon ball (checked at 1e-12 by the acceptance suite).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .raster import ImageRaster, gaussian_blur

logger = logging.getLogger(__name__)

ATTACK_KINDS = (
    "fgsm",
    "pgd",
    "deepfool",
    "boundary",
    "square",
    "apgd_ce",
    "fab",
    "patch",
    "blur",
    "semantic_shift",
)

DEEPFOOL_OVERSHOOT = 0.02
BOUNDARY_ORTH_STEP = 0.1


class AttackError(ValueError):
    pass


@dataclass
class AttackConfig:
    kind: str = "fgsm"
    epsilon: float = 8.0 / 255.0
    alpha: Optional[float] = None
    steps: int = 10
    norm: str = "Linf"
    seed: int = 0
    sigma: Optional[float] = None  # blur attack
    overshoot: float = DEEPFOOL_OVERSHOOT
    momentum: float = 0.75
    stagnation_window: Optional[int] = None
    square_area_frac: float = 0.1
    fd_directions: int = 64
    fd_step: float = 1.0 / 128.0
    fd_tol: float = 1e-8  # components below this are numerical noise, not gradient

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise AttackError(f"unknown attack kind {self.kind!r}")
        if self.epsilon < 0:
            raise AttackError("epsilon must be >= 0")
        if self.steps < 1:
            raise AttackError("steps must be >= 1")
        if self.alpha is not None and self.alpha <= 0:
            raise AttackError("alpha must be positive where used")
        if self.norm not in ("Linf", "L2"):
            raise AttackError(f"unknown norm {self.norm!r}")


@dataclass
class AttackResult:
    adversarial: ImageRaster
    linf: float
    l2: float
    success: bool
    loss_trajectory: List[float] = field(default_factory=list)
    queries: int = 0
    meta: Dict = field(default_factory=dict)


def _clip01(arr: np.ndarray) -> np.ndarray:
    return np.clip(arr, 0.0, 1.0)


def _project_ball(arr: np.ndarray, origin: np.ndarray, eps: float) -> np.ndarray:
    return np.clip(arr, origin - eps, origin + eps)


def _raster(arr: np.ndarray, like: ImageRaster) -> ImageRaster:
    return ImageRaster(arr, color_space=like.color_space)


def _norms(adv: np.ndarray, orig: np.ndarray) -> Tuple[float, float]:
    diff = adv - orig
    return float(np.max(np.abs(diff))), float(np.sqrt(np.sum(diff * diff)))


def _result(adv_arr, x, like, success, traj, queries, **meta) -> AttackResult:
    linf, l2 = _norms(adv_arr, x)
    return AttackResult(
        adversarial=_raster(adv_arr, like),
        linf=linf,
        l2=l2,
        success=success,
        loss_trajectory=traj,
        queries=queries,
        meta=meta,
    )


# ---------------------------------------------------------------------------
# Gradient attacks
# ---------------------------------------------------------------------------

def fgsm(x: ImageRaster, y: int, cfg: AttackConfig, model) -> AttackResult:
    """One signed-gradient step of size epsilon, clamped to [0, 1]."""
    arr = np.array(x.data)
    loss0, grad = model.loss_and_grad(x, y)
    adv = _clip01(arr + cfg.epsilon * np.sign(grad))
    adv_r = _raster(adv, x)
    loss1 = model.loss_and_grad(adv_r, y)[0]
    success = model.predict(adv_r) != model.predict(x)
    return _result(adv, arr, x, success, [loss0, loss1], queries=4)


def pgd(x: ImageRaster, y: int, cfg: AttackConfig, model) -> AttackResult:
    """Iterated signed steps projected into the epsilon ball and [0, 1].

    With steps=1 and alpha=epsilon this reduces to fgsm exactly.
    """
    if cfg.alpha is None:
        raise AttackError("pgd requires alpha")
    arr = np.array(x.data)
    x_t = arr.copy()
    traj: List[float] = []
    queries = 0
    iterates = []
    for _ in range(cfg.steps):
        loss, grad = model.loss_and_grad(_raster(x_t, x), y)
        queries += 1
        traj.append(loss)
        x_t = _clip01(_project_ball(x_t + cfg.alpha * np.sign(grad), arr, cfg.epsilon))
        iterates.append(float(np.max(np.abs(x_t - arr))))
    adv_r = _raster(x_t, x)
    traj.append(model.loss_and_grad(adv_r, y)[0])
    queries += 1
    success = model.predict(adv_r) != model.predict(x)
    return _result(x_t, arr, x, success, traj, queries + 2, iterate_linf=iterates)


def deepfool(x: ImageRaster, cfg: AttackConfig, model, y: Optional[int] = None) -> AttackResult:
    """Minimal-perturbation walk to the decision boundary with overshoot.

    On an affine decision function the prediction flips in exactly one step
    with perturbation L2 = |f(x)| / ||grad f||_2 * (1 + overshoot).
    """
    arr = np.array(x.data)
    label0 = model.predict(x)
    if y is not None and label0 != y:
        return _result(arr.copy(), arr, x, True, [], queries=1, note="already misclassified")
    x_t = arr.copy()
    traj: List[float] = []
    queries = 1
    success = False
    for _ in range(cfg.steps):
        f, g = model.decision_and_grad(_raster(x_t, x))
        queries += 1
        traj.append(f)
        gnorm2 = float(np.sum(g * g))
        if gnorm2 == 0.0:
            break
        delta = -(f / gnorm2) * g
        x_t = _clip01(x_t + (1.0 + cfg.overshoot) * delta)
        if model.predict(_raster(x_t, x)) != label0:
            queries += 1
            success = True
            break
        queries += 1
    return _result(x_t, arr, x, success, traj, queries)


# ---------------------------------------------------------------------------
# Decision- and score-based attacks
# ---------------------------------------------------------------------------

def boundary_attack(x: ImageRaster, x_star: ImageRaster, cfg: AttackConfig, model) -> AttackResult:
    """Decision-only walk from an adversarial seed toward the original.

    Alternates an on-sphere orthogonal proposal with a contraction step
    toward the original; a proposal is accepted only if it stays adversarial
    (and, for the orthogonal move, does not increase the distance), so the
    accepted-distance sequence never increases.
    """
    arr = np.array(x.data)
    seed_arr = np.array(x_star.data)
    label0 = model.predict(x)
    if model.predict(x_star) == label0:
        raise AttackError("seed is not adversarial for this model")
    rng = np.random.default_rng(cfg.seed)
    eta_src = cfg.alpha if cfg.alpha is not None else 0.1
    z = seed_arr.copy()
    dist = float(np.linalg.norm(z - arr))
    dists = [dist]
    queries = 2
    for _ in range(cfg.steps):
        direction = arr - z
        dnorm = float(np.linalg.norm(direction))
        if dnorm == 0.0:
            break
        u = rng.normal(size=arr.shape)
        u -= (np.sum(u * direction) / (dnorm * dnorm)) * direction
        unorm = float(np.linalg.norm(u))
        if unorm > 0:
            cand = z + (BOUNDARY_ORTH_STEP * dist / unorm) * u
            offset = cand - arr
            onorm = float(np.linalg.norm(offset))
            if onorm > 0:
                cand = _clip01(arr + (dist / onorm) * offset)
                cand_dist = float(np.linalg.norm(cand - arr))
                queries += 1
                if cand_dist <= dist and model.predict(_raster(cand, x)) != label0:
                    z = cand
                    dist = cand_dist
                    dists.append(dist)
        cand = _clip01(z + eta_src * (arr - z))
        queries += 1
        if model.predict(_raster(cand, x)) != label0:
            z = cand
            dist = float(np.linalg.norm(z - arr))
            dists.append(dist)
    return _result(z, arr, x, True, [], queries, accepted_distances=dists)


def square_attack(x: ImageRaster, y: int, cfg: AttackConfig, model) -> AttackResult:
    """Random-square search using only loss values (score access).

    Each proposal rewrites one random square with +/-epsilon per channel
    (anchored to the original image, so the Linf budget always holds) and is
    accepted only on strict loss increase.  The square side starts at
    ``square_area_frac`` of the image area and halves every fifth of the
    budget.
    """
    arr = np.array(x.data)
    h, w, c = arr.shape
    rng = np.random.default_rng(cfg.seed)
    best = arr.copy()
    best_loss = model.loss_and_grad(x, y)[0]
    traj = [best_loss]
    queries = 1
    accepted = 0
    p = cfg.square_area_frac
    decay_every = max(1, cfg.steps // 5)
    for t in range(cfg.steps):
        if t > 0 and t % decay_every == 0:
            p = max(p / 2.0, 1.0 / (h * w))
        side = max(1, int(round(np.sqrt(p * h * w))))
        side = min(side, h, w)
        y0 = int(rng.integers(0, h - side + 1))
        x0 = int(rng.integers(0, w - side + 1))
        signs = rng.choice((-1.0, 1.0), size=c)
        cand = best.copy()
        cand[y0 : y0 + side, x0 : x0 + side, :] = _clip01(
            arr[y0 : y0 + side, x0 : x0 + side, :] + cfg.epsilon * signs[None, None, :]
        )
        loss = model.loss_and_grad(_raster(cand, x), y)[0]
        queries += 1
        if loss > best_loss:
            best = cand
            best_loss = loss
            traj.append(loss)
            accepted += 1
    adv_r = _raster(best, x)
    success = model.predict(adv_r) != y
    queries += 1
    return _result(best, arr, x, success, traj, queries, accepted=accepted)


# ---------------------------------------------------------------------------
# AutoAttack-lite components
# ---------------------------------------------------------------------------

def apgd_ce_step(
    x_t: np.ndarray,
    x_prev: np.ndarray,
    grad: np.ndarray,
    alpha: float,
    momentum: float,
    origin: np.ndarray,
    eps: float,
) -> np.ndarray:
    """One momentum-weighted projected signed step.

    With momentum 0 this is exactly the pgd iterate.
    """
    step = alpha * np.sign(grad) + momentum * (x_t - x_prev)
    return _clip01(_project_ball(x_t + step, origin, eps))


def apgd_ce(x: ImageRaster, y: int, cfg: AttackConfig, model) -> AttackResult:
    """Projected signed ascent with momentum and step-size halving on
    stagnation (restarting from the best iterate)."""
    if cfg.alpha is None:
        raise AttackError("apgd_ce requires alpha")
    arr = np.array(x.data)
    window = cfg.stagnation_window or max(2, cfg.steps // 5)
    alpha = cfg.alpha
    x_prev = arr.copy()
    x_t = arr.copy()
    best = arr.copy()
    best_loss = model.loss_and_grad(x, y)[0]
    traj = [best_loss]
    queries = 1
    since_improve = 0
    halvings = 0
    iterates = []
    for _ in range(cfg.steps):
        loss, grad = model.loss_and_grad(_raster(x_t, x), y)
        queries += 1
        x_next = apgd_ce_step(x_t, x_prev, grad, alpha, cfg.momentum, arr, cfg.epsilon)
        x_prev, x_t = x_t, x_next
        iterates.append(float(np.max(np.abs(x_t - arr))))
        loss_next = model.loss_and_grad(_raster(x_t, x), y)[0]
        queries += 1
        traj.append(loss_next)
        if loss_next > best_loss + 1e-12:
            best = x_t.copy()
            best_loss = loss_next
            since_improve = 0
        else:
            since_improve += 1
            if since_improve >= window:
                alpha /= 2.0
                halvings += 1
                x_t = best.copy()
                x_prev = best.copy()
                since_improve = 0
    adv_r = _raster(best, x)
    success = model.predict(adv_r) != model.predict(x)
    return _result(
        best, arr, x, success, traj, queries + 2,
        halvings=halvings, final_alpha=alpha, iterate_linf=iterates,
    )


def fab_step(x_t: np.ndarray, decision: float, grad: np.ndarray) -> np.ndarray:
    """Minimal-L2 projection onto the (linearized) decision boundary."""
    gnorm2 = float(np.sum(grad * grad))
    if gnorm2 == 0.0:
        return x_t.copy()
    return _clip01(x_t - (decision / gnorm2) * grad)


def fab(x: ImageRaster, cfg: AttackConfig, model) -> AttackResult:
    """Iterated minimal-norm boundary projection (deepfool sans overshoot on
    affine models)."""
    arr = np.array(x.data)
    label0 = model.predict(x)
    x_t = arr.copy()
    traj: List[float] = []
    queries = 1
    success = False
    for _ in range(cfg.steps):
        f, g = model.decision_and_grad(_raster(x_t, x))
        queries += 1
        traj.append(f)
        x_t = fab_step(x_t, f, g)
        queries += 1
        if model.predict(_raster(x_t, x)) != label0:
            success = True
            break
    return _result(x_t, arr, x, success, traj, queries)


def autoattack_lite(x: ImageRaster, y: int, cfg: AttackConfig, model) -> AttackResult:
    """Sequential composition of apgd_ce, fab and square; stops at the first
    successful stage.  Reported as "autoattack-lite", not a verbatim port."""
    stages = []
    cfg_a = AttackConfig(
        kind="apgd_ce",
        epsilon=cfg.epsilon,
        alpha=cfg.alpha or cfg.epsilon / 4.0,
        steps=cfg.steps,
        seed=cfg.seed,
        momentum=cfg.momentum,
        stagnation_window=cfg.stagnation_window,
    )
    for name, runner in (
        ("apgd_ce", lambda: apgd_ce(x, y, cfg_a, model)),
        ("fab", lambda: fab(x, AttackConfig(kind="fab", epsilon=cfg.epsilon, steps=cfg.steps, seed=cfg.seed), model)),
        ("square", lambda: square_attack(x, y, AttackConfig(kind="square", epsilon=cfg.epsilon, steps=max(cfg.steps, 50), seed=cfg.seed), model)),
    ):
        result = runner()
        stages.append(name)
        if result.success:
            result.meta["suite"] = "autoattack-lite"
            result.meta["stages_run"] = stages
            result.meta["winning_stage"] = name
            return result
    result.meta["suite"] = "autoattack-lite"
    result.meta["stages_run"] = stages
    result.meta["winning_stage"] = None
    return result


# ---------------------------------------------------------------------------
# Spatially and structurally targeted attacks
# ---------------------------------------------------------------------------

def patch_attack(x: ImageRaster, cfg: AttackConfig, patch: np.ndarray, mask: np.ndarray, model=None) -> AttackResult:
    """Composite x*(1-M) + P*M with a given patch and binary mask."""
    arr = np.array(x.data)
    m = np.asarray(mask, dtype=np.float64)
    if m.ndim == 2:
        m = m[:, :, None]
    p = np.asarray(patch, dtype=np.float64)
    if p.shape != arr.shape or m.shape[:2] != arr.shape[:2]:
        raise AttackError("patch/mask dimensions do not match the image")
    adv = _clip01(arr * (1.0 - m) + p * m)
    success = bool(model and model.predict(_raster(adv, x)) != model.predict(x))
    return _result(adv, arr, x, success, [], queries=2 if model else 0)


def blur_attack(x: ImageRaster, cfg: AttackConfig, mask: np.ndarray, model=None) -> AttackResult:
    """Masked Gaussian blur: (1 - M) * x + M * blur_sigma(x)."""
    if cfg.sigma is None or cfg.sigma <= 0:
        raise AttackError("blur attack requires sigma > 0")
    blurred = gaussian_blur(x, cfg.sigma, region=np.asarray(mask, dtype=bool))
    arr = np.array(x.data)
    adv = np.array(blurred.data)
    success = bool(model and model.predict(blurred) != model.predict(x))
    return _result(adv, arr, x, success, [], queries=2 if model else 0)


def semantic_shift(
    x: ImageRaster,
    cfg: AttackConfig,
    embedder,
    target_embedding: np.ndarray,
    model=None,
) -> AttackResult:
    """Signed step along a finite-difference estimate of the embedding-space
    distance gradient.

    The embedding backend stays inference-only: the gradient comes from
    central differences over ``fd_directions`` random directions, costing
    exactly 2 * fd_directions embedder queries per step.
    """
    target = np.asarray(target_embedding, dtype=np.float64)

    def emb_loss(arr: np.ndarray) -> float:
        vec = np.asarray(embedder.embed_image_patches([_raster(arr, x)])[0], dtype=np.float64)
        return float(np.linalg.norm(vec - target))

    arr = np.array(x.data)
    rng = np.random.default_rng(cfg.seed)
    h = cfg.fd_step
    queries = 0
    g_hat = np.zeros_like(arr)
    for _ in range(cfg.fd_directions):
        u = rng.normal(size=arr.shape)
        u /= np.linalg.norm(u)
        lp = emb_loss(_clip01(arr + h * u))
        lm = emb_loss(_clip01(arr - h * u))
        queries += 2
        g_hat += ((lp - lm) / (2.0 * h)) * u
    g_hat[np.abs(g_hat) <= cfg.fd_tol] = 0.0  # sign() must not amplify FD noise
    adv = _clip01(arr + cfg.epsilon * np.sign(g_hat))
    success = bool(model and model.predict(_raster(adv, x)) != model.predict(x))
    return _result(adv, arr, x, success, [], queries, fd_directions=cfg.fd_directions)


# ---------------------------------------------------------------------------
# Robustness curves
# ---------------------------------------------------------------------------

def accuracy_curve(
    images: List[ImageRaster],
    labels: List[int],
    kind: str,
    epsilons: List[float],
    model,
    steps: int = 10,
    seed: int = 0,
) -> List[Dict]:
    """Accuracy vs epsilon rows for the CLI: one dict per epsilon with keys
    epsilon, accuracy, mean_linf."""
    if kind not in ("fgsm", "pgd", "square", "apgd_ce"):
        raise AttackError(f"curve supports fgsm/pgd/square/apgd_ce, not {kind!r}")
    rows = []
    for eps in epsilons:
        correct = 0
        linfs = []
        for i, (img, y) in enumerate(zip(images, labels)):
            cfg = AttackConfig(kind=kind, epsilon=eps, alpha=eps / 4.0 if kind != "fgsm" else None,
                               steps=steps, seed=seed + i)
            if kind == "fgsm":
                res = fgsm(img, y, cfg, model)
            elif kind == "pgd":
                res = pgd(img, y, cfg, model)
            elif kind == "apgd_ce":
                res = apgd_ce(img, y, cfg, model)
            else:
                res = square_attack(img, y, cfg, model)
            if model.predict(res.adversarial) == y:
                correct += 1
            linfs.append(res.linf)
        rows.append(
            {
                "epsilon": eps,
                "accuracy": correct / len(images) if images else 0.0,
                "mean_linf": float(np.mean(linfs)) if linfs else 0.0,
            }
        )
    return rows
