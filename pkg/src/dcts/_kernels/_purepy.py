"""Numpy implementations of the hot kernels.

Used when the compiled extension is unavailable or when ``DCTS_PURE_PYTHON``
is set. Every function here has a twin with the same signature in
``_ckernels.pyx``; the two are checked against each other in the test suite.
"""

import numpy as np

BACKEND = "python"


def prior_params(success, failure, user_row, nbr_users, nbr_weights,
                 candidates, ad_nbr_idx, ad_nbr_weights):
    """Similarity-weighted prior pseudo-counts for one user and many ads.

    Parameters
    ----------
    success, failure : ndarray of shape (n_users, n_ads)
        Discounted per-(user, ad) accumulators.
    user_row : int
        Ledger row of the acting user, or -1 if the user has no history.
    nbr_users : ndarray of int64, shape (m,)
        Ledger rows of neighbouring users (the acting user excluded).
    nbr_weights : ndarray of float64, shape (m,)
        Clamped user-user similarities matching ``nbr_users``.
    candidates : ndarray of int64, shape (c,)
        Ledger columns of the candidate ads.
    ad_nbr_idx : ndarray of int64, shape (c, K)
        For each candidate, ledger columns of its neighbouring ads, padded
        with -1.
    ad_nbr_weights : ndarray of float64, shape (c, K)
        Clamped ad-ad similarities matching ``ad_nbr_idx`` (0 on padding).

    Returns
    -------
    alpha0, beta0 : ndarray of float64, shape (c,)
    """
    c = candidates.shape[0]
    alpha0 = np.zeros(c)
    beta0 = np.zeros(c)
    if user_row >= 0 and ad_nbr_idx.size:
        valid = ad_nbr_idx >= 0
        cols = np.where(valid, ad_nbr_idx, 0)
        w = np.where(valid, ad_nbr_weights, 0.0)
        alpha0 += (w * success[user_row, cols]).sum(axis=1)
        beta0 += (w * failure[user_row, cols]).sum(axis=1)
    if nbr_users.shape[0]:
        alpha0 += nbr_weights @ success[np.ix_(nbr_users, candidates)]
        beta0 += nbr_weights @ failure[np.ix_(nbr_users, candidates)]
    return alpha0, beta0


def posterior_params(alpha0, beta0, personal_s, personal_f,
                     global_s, global_f, lam, g):
    """Beta posterior parameters from prior pseudo-counts and own evidence.

    The prior weight shrinks as ``lam / (own_count + 1)``; the trailing 1 is
    the pseudo-count that keeps both parameters >= 1.
    """
    alpha = lam / (personal_s + 1.0) * alpha0 + g * global_s + personal_s + 1.0
    beta = lam / (personal_f + 1.0) * beta0 + g * global_f + personal_f + 1.0
    return alpha, beta


def signatures(planes, vectors):
    """Random-hyperplane signatures packed into one integer per table.

    ``planes`` has shape (n_tables, n_bits, dim) with ``n_bits <= 64``;
    ``vectors`` has shape (n, dim). Bit ``b`` of table ``t`` is set when the
    vector lies strictly on the positive side of hyperplane ``(t, b)``.
    """
    n_tables, n_bits, dim = planes.shape
    n = vectors.shape[0]
    codes = np.zeros((n, n_tables), dtype=np.uint64)
    if n == 0:
        return codes
    proj = np.asarray(vectors, dtype=np.float64) @ np.asarray(planes).reshape(n_tables * n_bits, dim).T
    bits = proj.reshape(n, n_tables, n_bits) > 0.0
    weights = np.left_shift(np.uint64(1), np.arange(n_bits, dtype=np.uint64))
    for t in range(n_tables):
        codes[:, t] = (bits[:, t, :].astype(np.uint64) * weights).sum(
            axis=1, dtype=np.uint64)
    return codes


def hamming(codes, query):
    """Total Hamming distance, summed over tables, from ``query`` to each row."""
    if codes.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    x = np.bitwise_xor(codes, query[np.newaxis, :])
    return np.bitwise_count(x).sum(axis=1).astype(np.int64)
