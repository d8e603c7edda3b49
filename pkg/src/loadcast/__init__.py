"""Building load forecasting: RNN, LSTM, and cosine-attention Transformer
models trained from scratch, plus building-to-building transfer learning."""

__version__ = "0.1.0"
