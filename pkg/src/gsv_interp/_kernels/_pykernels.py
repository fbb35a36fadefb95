"""Pure numpy sparse kernels, used when the compiled extension is missing."""

import numpy as np


def csr_matvec(indptr, indices, data, x, nrows):
    row_ids = np.repeat(np.arange(nrows), np.diff(indptr))
    return np.bincount(row_ids, weights=data * x[indices], minlength=nrows)


def csr_rmatvec(indptr, indices, data, x, ncols):
    nrows = len(indptr) - 1
    row_ids = np.repeat(np.arange(nrows), np.diff(indptr))
    return np.bincount(indices, weights=data * x[row_ids], minlength=ncols)
