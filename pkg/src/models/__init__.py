"""Market model, game assembly and the follower and leader solvers."""
