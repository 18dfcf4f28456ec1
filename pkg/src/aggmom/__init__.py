"""Method-of-moments estimation of Markov chains from noisy aggregate counts."""
