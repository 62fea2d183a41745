"""Mean-field backward stochastic variational inequalities via Yosida penalization."""
