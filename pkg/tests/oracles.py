"""Independent reference implementations used to freeze expected values.

Everything here is written as straight-line transcriptions of the defining
formulas (loops, explicit matrices, no FFT shortcuts) so the fast paths in
the package are checked against structurally different computations.
"""

import numpy as np


def matched_filter_dense(h, dictionary):
    """a_p^H h for every column, evaluated column by column."""
    p = dictionary.shape[1]
    return np.array([dictionary[:, i].conj() @ h for i in range(p)])


def quadratic_forms_dense(q, dictionary):
    """a_p^H Q a_p for every column, one explicit product per grid point."""
    p = dictionary.shape[1]
    return np.array([
        (dictionary[:, i].conj() @ q @ dictionary[:, i]) for i in range(p)
    ])


def covariance_dense(dictionary, weights):
    """A diag(w) A^H as an explicit triple product."""
    return dictionary @ np.diag(weights) @ dictionary.conj().T


def masked_iaa_dense(h_masked, mask, dictionary, max_iterations, tol, loading_rel):
    """Literal selection-matrix transcription of the masked estimator.

    Builds J explicitly, iterates amplitude and covariance updates with the
    reduced matrices, and mirrors the package's convergence rule.
    """
    mask = np.asarray(mask, dtype=bool)
    m_full = mask.size
    j_sel = np.eye(m_full)[mask]              # (M_kept, M)
    a_masked = j_sel @ dictionary             # J A
    m_kept = a_masked.shape[0]
    p = dictionary.shape[1]

    beta = np.array([a_masked[:, i].conj() @ h_masked for i in range(p)]) / m_kept
    prev = np.abs(beta)
    for _ in range(max_iterations):
        cov = a_masked @ np.diag(prev**2) @ a_masked.conj().T
        cov = cov + loading_rel * np.mean(np.real(np.diag(cov))) * np.eye(m_kept)
        q = np.linalg.inv(cov)
        lifted_vec = j_sel.T @ (q @ h_masked)
        lifted_mat = j_sel.T @ q @ j_sel
        numer = np.array([dictionary[:, i].conj() @ lifted_vec for i in range(p)])
        denom = np.array([
            np.real(dictionary[:, i].conj() @ lifted_mat @ dictionary[:, i])
            for i in range(p)
        ])
        beta = numer / denom
        mag = np.abs(beta)
        delta = np.max(np.abs(mag - prev)) / np.max(prev)
        prev = mag
        if delta < tol:
            break
    return beta


def local_maxima_brute(values):
    """Strict local maxima with plateau-left semantics, endpoints included."""
    out = []
    n = len(values)
    i = 0
    while i < n:
        j = i
        while j + 1 < n and values[j + 1] == values[i]:
            j += 1
        left = values[i - 1] if i > 0 else -np.inf
        right = values[j + 1] if j + 1 < n else -np.inf
        if values[i] > left and values[i] > right:
            out.append(i)
        i = j + 1
    return out


def vectorized_periodogram_dense(cfr_data, delay_vectors, angle_vectors):
    """|sig(tau, theta)^H vec(H)|^2 / (M N) with explicit Kronecker signatures."""
    m, n = cfr_data.shape
    vec_h = cfr_data.ravel(order="F")
    p = delay_vectors.shape[1]
    q = angle_vectors.shape[1]
    power = np.empty((p, q))
    for i in range(p):
        for j in range(q):
            sig = np.kron(angle_vectors[:, j], delay_vectors[:, i])
            power[i, j] = np.abs(sig.conj() @ vec_h) ** 2 / (m * n)
    return power
