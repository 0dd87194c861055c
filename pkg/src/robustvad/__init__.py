"""robustvad: weakly supervised video anomaly detection with adversarial
training and evaluation, self-contained on synthetic video.

Subpackages follow the processing order: videostore (data) -> scorer (model)
-> srd (pseudo-anomaly synthesis) -> attacks -> pipeline (training phases)
-> evalkit (metrics/reports) -> cli.
"""

__version__ = "0.1.0"
