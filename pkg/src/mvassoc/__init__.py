"""Association between covariates and a multivariate outcome via stacked learners and cross-validation."""
