"""Actor-critic ABR policy: network, rollouts, training and checkpoints."""
