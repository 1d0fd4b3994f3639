"""Multi-robot trajectory planning as inference over control sequences."""
