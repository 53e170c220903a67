# goal_lab/management/commands/check_goal_lab.py
import json

import numpy as np
from django.core.management.base import BaseCommand, CommandError
from django.utils.translation import gettext_lazy

from goal_lab.analysis import (
    bellman_residual, check_gradients, check_objective_ordering, compare_to_oracle,
    tabular_q_learning, value_iteration,
)
from goal_lab.agents import AgentNets, AgentConfig, rollout, select_action
from goal_lab.envs import GridStitch, make_env
from goal_lab.replay import EpisodeBuffer, relabel_stats

CHECKS = ('gradients', 'ordering', 'oracle', 'relabel')


def check_gradient_fidelity(rng, options):
    result = check_gradients(n_nets=options['n_nets'], rng=rng)
    return result.max_rel_error < 1e-4, {
        'n_nets': result.n_nets,
        'coordinates_checked': result.n_checked,
        'coordinates_skipped': result.n_skipped,
        'max_rel_error': result.max_rel_error,
    }


def check_ordering(rng, options):
    held = check_objective_ordering(n_batches=options['n_batches'], rng=rng)
    # Raw weights above 1 are expected to break the ordering somewhere.
    unconstrained = check_objective_ordering(n_batches=options['n_batches'], rng=rng, cap_weights=False)
    return held.violations == 0, {
        'n_batches': held.n_batches,
        'violations': held.violations,
        'smallest_gap': held.smallest_gap,
        'violations_without_weight_cap': unconstrained.violations,
    }


def check_oracle(rng, options):
    env = GridStitch()
    oracle = value_iteration(env, gamma=0.98)
    learned = tabular_q_learning(env, gamma=0.98, n_episodes=options['q_episodes'], rng=rng)
    comparison = compare_to_oracle(learned, oracle)
    residual = bellman_residual(oracle, env)
    passed = comparison.sup_norm <= 1e-3 and comparison.argmax_agree and residual <= 1e-9
    return passed, {
        'sup_norm': comparison.sup_norm,
        'bellman_residual': residual,
        'argmax_mismatches': [list(pair) for pair in comparison.argmax_mismatches],
        'q_a_start_to_hub_gb': oracle.q('a_start', 'to_hub', 'gb'),
    }


def check_relabel(rng, options):
    env = make_env('point-reach')
    cfg = AgentConfig(hidden_units=16)
    nets = AgentNets(env, cfg, rng)
    buffer = EpisodeBuffer(env)
    for _ in range(20):
        episode, _ = rollout(env, lambda obs: select_action(nets, obs.state, obs.desired, cfg, rng, explore=True), rng)
        buffer.store_episode(episode)
    stats = relabel_stats(buffer, options['n_draws'], relabel_prob=0.8, rng=rng)
    min_offset = min(stats.offset_histogram) if stats.offset_histogram else None
    passed = abs(stats.relabel_fraction - 0.8) <= 0.01 and (min_offset is None or min_offset >= 1)
    return passed, {
        'n_draws': stats.n_draws,
        'relabel_fraction': stats.relabel_fraction,
        'min_offset': min_offset,
    }


RUNNERS = {
    'gradients': check_gradient_fidelity,
    'ordering': check_ordering,
    'oracle': check_oracle,
    'relabel': check_relabel,
}


class Command(BaseCommand):
    help = gettext_lazy('Runs the numerical self-checks and prints PASS/FAIL per check followed by JSON.')

    def add_arguments(self, parser):
        parser.add_argument('checks', nargs='*', help=f'Checks to run ({", ".join(CHECKS)}); all when omitted.')
        parser.add_argument('--seed', type=int, default=0)
        parser.add_argument('--n-nets', type=int, default=100)
        parser.add_argument('--n-batches', type=int, default=1000)
        parser.add_argument('--q-episodes', type=int, default=50_000)
        parser.add_argument('--n-draws', type=int, default=100_000)

    def handle(self, *args, **options):
        selected = options['checks'] or list(CHECKS)
        unknown = sorted(set(selected) - set(CHECKS))
        if unknown:
            raise CommandError(f'Unknown check(s): {", ".join(unknown)}')
        results = {}
        for index, name in enumerate(selected):
            rng = np.random.default_rng([options['seed'], index])
            passed, details = RUNNERS[name](rng, options)
            results[name] = {'passed': bool(passed), **details}
            line = f'{"PASS" if passed else "FAIL"} {name}'
            self.stdout.write(self.style.SUCCESS(line) if passed else self.style.ERROR(line))

        self.stdout.write(json.dumps(results, indent=2, sort_keys=True))
        failed = [name for name, result in results.items() if not result['passed']]
        if failed:
            raise CommandError(f'Failed checks: {", ".join(failed)}')
