"""Reference image-quality values for tests/test_metrics.cpp.

Regenerate with:  python3 tests/oracles/metrics_oracle.py > tests/oracles/metrics_reference.inc

Inputs come from a 64-bit LCG that the C++ test reproduces bit-for-bit. SSIM is
scikit-image's Gaussian-weighted variant (sigma 1.5, population covariance).
"""

import numpy as np
from skimage.metrics import structural_similarity

MASK = (1 << 64) - 1


class Lcg:
    def __init__(self, seed):
        self.state = seed & MASK

    def uniform(self):
        self.state = (self.state * 6364136223846793005 + 1442695040888963407) & MASK
        return (self.state >> 11) * (1.0 / (1 << 53))


def make_pair(index):
    h, w = (32, 32) if index < 16 else (24, 40)
    rng = Lcg(1000 + index)
    ref = np.empty((h, w))
    test = np.empty((h, w))
    for i in range(h):
        for j in range(w):
            ref[i, j] = rng.uniform()
    noise = 0.05 + 0.02 * index
    for i in range(h):
        for j in range(w):
            test[i, j] = ref[i, j] + noise * (rng.uniform() - 0.5)
    return ref, test


def metrics(ref, test):
    data_range = ref.max()
    err = ref - test
    rmse = np.sqrt(np.mean(err ** 2))
    nmse = np.sum(err ** 2) / np.sum(ref ** 2)
    psnr = 20.0 * np.log10(data_range / rmse)
    ssim = structural_similarity(ref, test, data_range=data_range, gaussian_weights=True, sigma=1.5,
                                 use_sample_covariance=False)
    return psnr, ssim, nmse, rmse


def main():
    print("// Generated by tests/oracles/metrics_oracle.py; do not edit.")
    print("// {psnr, ssim, nmse, rmse} per LCG pair index.")
    for k in range(20):
        ref, test = make_pair(k)
        vals = metrics(ref, test)
        print("{" + ", ".join(repr(float(v)) for v in vals) + "},")


if __name__ == "__main__":
    main()
