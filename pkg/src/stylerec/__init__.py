"""Static and sequential customer-style models for fashion recommendation.

Modules
-------
numerics       small math helpers, Adam, seeded RNG streams
catalog        articles, availability windows, sales files
static_model   feed-forward article encoder + per-customer logistic styles
dynamic_model  LSTM over purchase histories producing time-dependent styles
baseline       popularity ranking
evaluation     backtest, cumulative rank curve, AUC
synthgen       seeded synthetic market with ground truth
cli            command-line pipeline (``stylerec``)
"""

__version__ = "0.1.0"
