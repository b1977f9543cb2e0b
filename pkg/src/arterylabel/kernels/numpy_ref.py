"""Pure-numpy kernels for the classifier network.

Reference implementation of the backend contract shared with the
compiled core in ``_native``:

* ``forward_eval``  : affine -> batch norm (running stats) -> ReLU per
  hidden block, final affine -> softmax; no dropout.
* ``forward_train`` : same stack with per-batch statistics and an
  optional pre-scaled dropout mask after the last hidden activation.
* ``loss_and_grads``: train-mode forward plus focal loss and full
  backpropagation through softmax, dropout, ReLU, batch norm and the
  affine layers.

Parameter lists are ordered by layer: ``ws``/``bs`` have one entry per
affine layer, ``gammas``/``betas``/means/vars one per batch-norm block
(every layer except the output). All arrays are float64, C-contiguous.
"""

import numpy as np

NAME = "numpy"

PROB_FLOOR = 1e-12


def _softmax(z):
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def focal_loss_from_probs(probs, targets, focal_gamma):
    """Mean of -(1 - p_t)^gamma * ln(p_t), p_t floored at 1e-12."""
    p_t = probs[np.arange(len(targets)), targets]
    p_clamped = np.maximum(p_t, PROB_FLOOR)
    return float(np.mean(-((1.0 - p_t) ** focal_gamma) * np.log(p_clamped)))


def forward_eval(ws, bs, gammas, betas, run_means, run_vars, x, eps):
    a = x
    for i in range(len(ws) - 1):
        z = a @ ws[i] + bs[i]
        xhat = (z - run_means[i]) / np.sqrt(run_vars[i] + eps)
        a = np.maximum(gammas[i] * xhat + betas[i], 0.0)
    return _softmax(a @ ws[-1] + bs[-1])


def forward_train(ws, bs, gammas, betas, x, dropout_mask, eps):
    """Returns (probs, batch_means, batch_vars); variances are biased."""
    probs, _, means, variances = _train_pass(ws, bs, gammas, betas, x, dropout_mask, eps)
    return probs, means, variances


def _train_pass(ws, bs, gammas, betas, x, dropout_mask, eps):
    n_hidden = len(ws) - 1
    acts = [x]
    caches = []
    means = []
    variances = []
    a = x
    for i in range(n_hidden):
        z = a @ ws[i] + bs[i]
        mu = z.mean(axis=0)
        var = z.var(axis=0)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (z - mu) * inv_std
        u = gammas[i] * xhat + betas[i]
        a = np.maximum(u, 0.0)
        if i == n_hidden - 1 and dropout_mask is not None:
            a = a * dropout_mask
        caches.append((xhat, inv_std, u > 0.0))
        means.append(mu)
        variances.append(var)
        acts.append(a)
    probs = _softmax(a @ ws[-1] + bs[-1])
    return probs, (acts, caches), means, variances


def _focal_logit_grad(probs, targets, focal_gamma):
    """d(mean focal loss)/d(logits); classic p - onehot when gamma = 0."""
    n = len(targets)
    p_t = probs[np.arange(n), targets]
    u = 1.0 - p_t
    modulator = u**focal_gamma
    coef = -modulator
    if focal_gamma > 0.0:
        pos = u > 0.0
        log_p = np.log(np.maximum(p_t, PROB_FLOOR))
        coef = coef.copy()
        coef[pos] += focal_gamma * p_t[pos] * u[pos] ** (focal_gamma - 1.0) * log_p[pos]
    onehot = np.zeros_like(probs)
    onehot[np.arange(n), targets] = 1.0
    return coef[:, None] * (onehot - probs) / n


def loss_and_grads(ws, bs, gammas, betas, x, targets, focal_gamma, dropout_mask, eps):
    n_hidden = len(ws) - 1
    n = len(x)
    probs, (acts, caches), means, variances = _train_pass(
        ws, bs, gammas, betas, x, dropout_mask, eps
    )
    loss = focal_loss_from_probs(probs, targets, focal_gamma)

    d_ws = [None] * len(ws)
    d_bs = [None] * len(ws)
    d_gammas = [None] * n_hidden
    d_betas = [None] * n_hidden

    dz = _focal_logit_grad(probs, targets, focal_gamma)
    d_ws[-1] = acts[-1].T @ dz
    d_bs[-1] = dz.sum(axis=0)
    da = dz @ ws[-1].T

    for i in range(n_hidden - 1, -1, -1):
        xhat, inv_std, relu_mask = caches[i]
        if i == n_hidden - 1 and dropout_mask is not None:
            da = da * dropout_mask
        du = da * relu_mask
        d_gammas[i] = (du * xhat).sum(axis=0)
        d_betas[i] = du.sum(axis=0)
        dxhat = du * gammas[i]
        dz = (inv_std / n) * (
            n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0)
        )
        d_ws[i] = acts[i].T @ dz
        d_bs[i] = dz.sum(axis=0)
        if i > 0:
            da = dz @ ws[i].T

    return loss, d_ws, d_bs, d_gammas, d_betas, means, variances, probs
