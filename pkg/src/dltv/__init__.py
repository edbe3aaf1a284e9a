"""Quantile-based exploration and risk-sensitive control for bandits and tabular MDPs."""

from .bandit import (ArmSpec, BanditEnv, make_asymmetric_env, make_counter_example,
                     make_figure1_target, make_symmetric_env, pull, run_bandit)
from .exploration import (Schedule, SelectionRule, action_scores, bonus_terms, schedule_value,
                          select_action, select_dltv, select_epsilon_greedy, select_mean_greedy,
                          select_naive, select_var_greedy)
from .harness import (ConfigError, ExperimentConfig, load_config, parse_config, read_records,
                      run_experiment, summarize, write_records)
from .quantile_core import (OnlineEstimatorState, OnlineQuantileEstimator, QuantileDistribution,
                            VarianceDecomposition, check_function, huber_loss,
                            huber_quantile_grad, huber_quantile_loss, mean, online_update,
                            quantile_levels, truncated_variance_plus, var_alpha, variance,
                            variance_decomposition)
from .tabular_rl import (AgentConfig, ExperimentRecord, GridWorld, QuantileTable, QuantileTDAgent,
                         TabularMDP, bellman_target, dltv_action, greedy_action, make_chain,
                         make_cliff_walk, make_gridworld, q_value, quantile_update, train_episodes)

__version__ = "0.1.0"
