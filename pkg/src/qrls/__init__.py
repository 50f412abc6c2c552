"""Sliding-window recursive least squares maintained in QR form.

Modules:
    linalg    - Givens/QR kernels and pseudoinverse maintenance
    features  - random Fourier feature maps
    rls       - the windowed min-norm filter built on the above
    baselines - covariance-form RLS, triangular QRD-RLS, kernel RLS
    data      - synthetic series, lag embedding, CSV ingestion
    harness   - prequential evaluation, sweeps, benchmarks, folds
    cli       - command line front end
"""

__version__ = "0.1.0"
