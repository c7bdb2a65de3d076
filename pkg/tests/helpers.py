"""Statistical helpers shared by sampler tests: batch-means standard
errors and joint-distribution (forward vs successive-conditional) checks."""

import numpy as np


def batch_means_se(values, num_batches=50):
    """Standard error of the mean of a correlated sequence via batch means."""
    values = np.asarray(values, dtype=np.float64)
    usable = (len(values) // num_batches) * num_batches
    if usable < 2 * num_batches:
        num_batches = max(2, len(values) // 2)
        usable = (len(values) // num_batches) * num_batches
    batches = values[:usable].reshape(num_batches, -1).mean(axis=1)
    return float(batches.std(ddof=1) / np.sqrt(num_batches))


def mean_and_se(values, num_batches=50):
    values = np.asarray(values, dtype=np.float64)
    return float(values.mean()), batch_means_se(values, num_batches)


def zscore(sample_mean, sample_se, ref_mean, ref_se=0.0):
    return (sample_mean - ref_mean) / np.hypot(sample_se, ref_se)
