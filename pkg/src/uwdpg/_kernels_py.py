"""Pure-Python twin of the compiled patch-correction kernel."""
import numpy as np


def patch_correction(r, idx, idx_ptr, blocks, blk_ptr, skip_tol, out):
    """``out += sum_k R_k^T A_k^{-1} R_k r`` over packed dense patch inverses."""
    for k in range(len(idx_ptr) - 1):
        ids = idx[idx_ptr[k]:idx_ptr[k + 1]]
        loc = r[ids]
        if np.linalg.norm(loc) <= skip_tol:
            continue
        m = ids.size
        inv = blocks[blk_ptr[k]:blk_ptr[k] + m * m].reshape(m, m)
        out[ids] += inv @ loc
    return out
