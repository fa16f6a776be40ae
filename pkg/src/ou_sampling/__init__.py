"""MSE-optimal sampling of an Ornstein-Uhlenbeck process over a random-delay channel."""

__version__ = "0.1.0"
