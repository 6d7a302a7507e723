"""Multi-gate mixture-of-experts estimation of simultaneous treatment effects.

Subpackages: ``engine`` (autodiff numerics), ``stats`` (seeded sampling,
PCA, k-means), ``datagen`` (benchmark generators and file ingestion),
``model`` (the estimator network), ``baseline`` (OLS covariate adjustment),
``harness`` (training and replication sweeps), ``cli`` (command line).
"""

__version__ = "0.1.0"
