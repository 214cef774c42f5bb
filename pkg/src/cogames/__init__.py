"""Learning combinatorial-optimization heuristics on graphs as
single-player games, with classical baselines and a benchmark harness."""

from .graphs import (EuclideanInstance, LineGraphMapping, WeightedGraph,
                     generate_directed_graph, generate_euclidean,
                     generate_random_graph, is_connected, is_spanning_tree,
                     line_graph)
from .oracles import (PathTree, RouteSet, Tour, TreeSolution, bellman_ford,
                      brute_force_vrp, dijkstra, farthest_insertion_tour,
                      held_karp, kruskal_mst, nearest_neighbor_tour, prim_mst,
                      tour_length, two_opt)
from .policy import (ActionDistribution, PolicyConfig, PolicyParams,
                     decode_step, encode, gat_layer, init_params, load_params,
                     save_params)
from .envs import (MstGame, SspGame, Trajectory, TspGame, VrpGame, mst_reward,
                   rollout, rollout_batch, ssp_reward, step, tsp_reward,
                   vrp_reward)
from .training import (AdamState, BaselineState, GapStats, TrainConfig,
                       evaluate, optimizer_step, reinforce_loss, train)

__version__ = "0.1.0"
