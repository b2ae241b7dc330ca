"""Compressive statistical learning with random Fourier sketches.

Sketch a dataset once with :func:`sketch_stream`, then fit k-means/k-medians
centroids or Gaussian mixture means from the sketch alone with :func:`decode`.
"""

from .errors import (
    CorruptFile,
    EmptySketch,
    IncompatibleSketch,
    InfeasibleSeparation,
    InvalidArgument,
    OutOfDomain,
    SketchError,
    UnsupportedFormat,
)
from .frequencies import (
    FREQ_VERSION,
    FrequencySet,
    load_frequencies,
    sample_dirac_frequencies,
    sample_frequencies,
    sample_gauss_frequencies,
    save_frequencies,
)
from .kernels import coherence_constant, coherence_constants, k_sigma, mean_embedding_kernel, mmd
from .models import Family, Hypothesis, KernelParams, MixtureModel, sigma_star
from .sketching import (
    SKETCH_VERSION,
    Sketch,
    atom_embedding,
    feature_map,
    finalize,
    load_sketch,
    merge,
    save_sketch,
    sketch_of_mixture,
    sketch_stream,
    update,
)

__version__ = "0.1.0"
