"""Synthetic wing bending-moment loads and tree-ensemble surrogates.

Modules
-------
wing        load model, feature sampler and dataset generator
dimred      PCA and piecewise-polynomial codecs
trees       CART regression trees and cost-complexity pruning
ensembles   bagging, random forest, gradient boosting, AdaBoost.R2
clustering  k-means with elbow selection
evaluation  scores, repeated split experiments, reports
"""

__version__ = "0.1.0"
