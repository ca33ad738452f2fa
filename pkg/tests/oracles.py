"""Independent reference implementations used by the tests."""
import itertools

import numpy as np
from scipy.stats import multivariate_normal


def dense_var1_logpdf(y, x, beta, phi, C, y0=None, x0=None):
    """Joint density of vec(y) built from w = A eps with A[t, s] = Phi^(t-s)."""
    S, T = y.shape
    Phi = np.diag(phi)
    A = np.zeros((S * T, S * T))
    for t in range(T):
        for s in range(t + 1):
            A[t * S:(t + 1) * S, s * S:(s + 1) * S] = np.linalg.matrix_power(Phi, t - s)
    cov = A @ np.kron(np.eye(T), C) @ A.T
    mean = np.concatenate([x[:, t] @ beta for t in range(T)])
    if y0 is not None:
        w0 = y0 - x0 @ beta
        mean = mean + np.concatenate([np.linalg.matrix_power(Phi, t + 1) @ w0 for t in range(T)])
    vec = np.concatenate([y[:, t] for t in range(T)])
    return multivariate_normal(mean, cov).logpdf(vec)


def hmm_enumerate(x, pi, A, means, variances):
    """Log-likelihood of a univariate Gaussian HMM summed over every state path."""
    L, T = len(pi), len(x)
    dens = np.exp(-0.5 * (x[:, None] - means) ** 2 / variances) / np.sqrt(2 * np.pi * variances)
    total = 0.0
    for path in itertools.product(range(L), repeat=T):
        p = pi[path[0]] * dens[0, path[0]]
        for t in range(1, T):
            p *= A[path[t - 1], path[t]] * dens[t, path[t]]
        total += p
    return np.log(total)


def dtw_bruteforce(a, b):
    """Minimum over every monotone alignment path of the summed |a_i - b_j|."""
    n, m = len(a), len(b)
    best = np.inf

    def walk(i, j, acc):
        nonlocal best
        acc += abs(a[i] - b[j])
        if acc >= best:
            return
        if i == n - 1 and j == m - 1:
            best = acc
            return
        if i + 1 < n:
            walk(i + 1, j, acc)
        if j + 1 < m:
            walk(i, j + 1, acc)
        if i + 1 < n and j + 1 < m:
            walk(i + 1, j + 1, acc)

    walk(0, 0, 0.0)
    return best


def mcc_pearson(pred, truth):
    return float(np.corrcoef(np.asarray(pred, float), np.asarray(truth, float))[0, 1])
