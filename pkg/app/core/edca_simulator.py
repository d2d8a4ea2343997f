"""
EDCA Discrete-Event Simulator
Simpy simulation of two-category EDCA with blind repetitions on an ideal shared channel,
used to validate the analytical delay moments
"""

import heapq
import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence

import numpy as np
import simpy

from app.core.delay_pgf import transmission_profile
from app.core.edca_model import arrival_probability, cw_schedule
from app.core.errors import SimulationError
from app.models.results import ACStats, SimStats
from app.models.scenario import ArrivalModel, SimConfig

logger = logging.getLogger(__name__)

MAX_COPIES = 4
# Slack when converting elapsed time into whole slots
SLOT_EPSILON = 1e-9

SUCCESS = "success"
EXTERNAL = "external"
INTERNAL = "internal"


class RunningStats:
    """Welford accumulator for delay samples"""

    def __init__(self, count: int = 0, mean: float = 0.0, m2: float = 0.0):
        self.count = count
        self.mean = mean
        self.m2 = m2

    def push(self, value: float):
        self.count += 1
        delta = value - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (value - self.mean)

    def merge(self, other: "RunningStats") -> "RunningStats":
        """Pooled accumulator of two disjoint sample sets"""
        count = self.count + other.count
        if count == 0:
            return RunningStats()
        delta = other.mean - self.mean
        mean = self.mean + delta * other.count / count
        m2 = self.m2 + other.m2 + delta ** 2 * self.count * other.count / count
        return RunningStats(count, mean, m2)

    @classmethod
    def from_ac_stats(cls, stats: ACStats) -> "RunningStats":
        if stats.n_samples == 0:
            return cls()
        return cls(stats.n_samples, stats.mean, stats.stddev ** 2 * stats.n_samples)

    @property
    def stddev(self) -> float:
        return math.sqrt(self.m2 / self.count) if self.count else float("nan")

    def to_ac_stats(self, internal: int = 0, external: int = 0, drops: int = 0) -> ACStats:
        return ACStats(
            n_samples=self.count,
            mean=self.mean if self.count else float("nan"),
            stddev=self.stddev,
            internal_collisions=internal,
            external_collisions=external,
            drops=drops,
        )


class ArrivalSource:
    """
    Inter-arrival gaps of one access category

    On the slot clock gaps are whole virtual slots and every slot holds an arrival with the
    probability the backoff chain uses; on the time clock gaps are seconds at the packet rate.
    """

    def __init__(self, model: ArrivalModel, clock: str, slot_time: float, rng: np.random.Generator):
        self.model = model
        self.clock = clock
        self.rng = rng
        if clock == "slot":
            self.rate = arrival_probability(model, slot_time)
        else:
            self.rate = model.rate

    @property
    def saturated(self) -> bool:
        return self.model.kind == "saturated"

    def gaps(self) -> Iterator[float]:
        if self.saturated or self.rate <= 0.0:
            return
        if self.model.kind == "periodic":
            period = 1.0 / self.rate
            position = period - self.rng.uniform(0.0, period)
            if self.clock == "time":
                yield position
                while True:
                    yield period
            previous = 0
            while True:
                current = max(previous + 1, math.ceil(position - SLOT_EPSILON))
                yield current - previous
                previous = current
                position += period
        elif self.clock == "slot":
            while True:
                yield int(self.rng.geometric(self.rate))
        else:
            while True:
                yield float(self.rng.exponential(1.0 / self.rate))


def draw_copies(rng: np.random.Generator, p_preamble: float, p_decode: float) -> int:
    """Copies sent in one burst: stop after the first copy that is detected and decoded"""
    for copy in range(1, MAX_COPIES):
        if rng.random() < p_preamble and rng.random() < p_decode:
            return copy
    return MAX_COPIES


@dataclass(frozen=True)
class Attempt:
    """Outcome of one channel access: status and the instant the attempt ended"""

    status: str
    end: float


@dataclass(eq=False)
class Backoff:
    """One backoff stage of an access category waiting for its transmit boundary"""

    station: int
    ac: int
    counter: int
    offset: int
    earliest: int
    done: simpy.Event
    admitted: bool = False
    start: float = 0.0


@dataclass
class Tally:
    """Counters of one replication"""

    warmup: float
    delays: List[RunningStats] = field(default_factory=lambda: [RunningStats(), RunningStats()])
    internal: List[int] = field(default_factory=lambda: [0, 0])
    external: List[int] = field(default_factory=lambda: [0, 0])
    drops: List[int] = field(default_factory=lambda: [0, 0])
    z_counts: List[int] = field(default_factory=lambda: [0] * MAX_COPIES)
    successes: int = 0
    bursts: int = 0

    def record(self, ac: int, start: float, end: float):
        if start >= self.warmup:
            self.delays[ac].push(end - start)


class Channel:
    """
    Shared medium advancing in virtual slots

    A virtual slot is an idle slot or a busy period: the longest burst of the stations that
    fired at the slot boundary, then SIFS and the smallest AIFSN. An access category whose
    AIFSN exceeds the smallest by d ignores the first d boundaries after a busy period, so
    its busy slots last a burst plus its own AIFS. Counters decrement once per virtual slot.
    """

    def __init__(self, env: simpy.Environment, simulator: "EDCASimulator",
                 rng: np.random.Generator, tally: Tally, horizon: float):
        self.env = env
        self.sim = simulator
        self.rng = rng
        self.tally = tally
        self.horizon = horizon
        self.step = 0
        # the medium has been idle long enough for every category at start
        self.idle_run = max(simulator.offsets)
        self.boundary = 0.0
        self.backoffs: List[Backoff] = []
        self._waiters: list = []
        self._order = itertools.count()
        self._idle_wait = False
        self._interrupted = False
        self.process = env.process(self.run())

    def _slots_since_boundary(self) -> int:
        return int(math.floor((self.env.now - self.boundary) / self.sim.slot + SLOT_EPSILON))

    def _current_step(self) -> int:
        return self.step + (self._slots_since_boundary() if self._idle_wait else 0)

    def _wake(self):
        if self._idle_wait and not self._interrupted:
            self._interrupted = True
            self.process.interrupt()

    def contend(self, station: int, ac: int, counter: int) -> Backoff:
        """
        Queue a backoff stage; it starts at the first eligible boundary after now

        Returns:
            Backoff: Its `done` event fires with the Attempt once the stage is resolved
        """
        backoff = Backoff(station=station, ac=ac, counter=counter, offset=self.sim.offsets[ac],
                          earliest=self._current_step() + 1, done=self.env.event())
        self.backoffs.append(backoff)
        self._wake()
        return backoff

    def after_steps(self, steps: int) -> simpy.Event:
        """Event fired at the boundary `steps` virtual slots from the current one"""
        event = self.env.event()
        heapq.heappush(self._waiters, (self._current_step() + steps, next(self._order), event))
        self._wake()
        return event

    def run(self):
        while True:
            fired = self._open_boundary()
            if fired:
                yield from self._transmit(fired)
                continue
            slots = self._slots_to_next_event()
            self._idle_wait = True
            try:
                yield self.env.timeout(max(0.0, self.boundary + slots * self.sim.slot - self.env.now))
                passed = slots
            except simpy.Interrupt:
                self._interrupted = False
                passed = min(slots, self._slots_since_boundary())
            finally:
                self._idle_wait = False
            self._advance_idle(passed)

    def _open_boundary(self) -> List[Backoff]:
        """Release step waiters, admit due backoffs and return those firing at this boundary"""
        while self._waiters and self._waiters[0][0] <= self.step:
            heapq.heappop(self._waiters)[2].succeed()
        for backoff in self.backoffs:
            if not backoff.admitted and backoff.earliest <= self.step and self.idle_run >= backoff.offset:
                backoff.admitted = True
                backoff.start = self.boundary
        return [backoff for backoff in self.backoffs
                if backoff.admitted and backoff.counter == 0 and self.idle_run >= backoff.offset]

    def _first_eligible(self, backoff: Backoff) -> int:
        """Slots from the current boundary to the first one the backoff may use"""
        first = max(1, backoff.offset - self.idle_run)
        if not backoff.admitted:
            first = max(first, backoff.earliest - self.step)
        return first

    def _slots_to_next_event(self) -> int:
        candidates = []
        if self._waiters:
            candidates.append(self._waiters[0][0] - self.step)
        for backoff in self.backoffs:
            first = self._first_eligible(backoff)
            if backoff.admitted:
                if backoff.counter < 1:
                    raise SimulationError(
                        f"backoff of station {backoff.station} AC{backoff.ac} idles with counter "
                        f"{backoff.counter} at t={self.env.now:.9f}")
                candidates.append(first + backoff.counter - 1)
            else:
                candidates.append(first + backoff.counter)
        if not candidates:
            return max(1, math.ceil((self.horizon - self.boundary) / self.sim.slot) + 1)
        return min(candidates)

    def _advance_idle(self, slots: int):
        """Move over `slots` idle boundaries in one go"""
        if slots <= 0:
            return
        last = self.step + slots
        for backoff in self.backoffs:
            first = self.step + self._first_eligible(backoff)
            if backoff.admitted:
                backoff.counter -= max(0, last - first + 1)
            elif first <= last:
                backoff.admitted = True
                backoff.start = self.boundary + (first - self.step) * self.sim.slot
                backoff.counter -= last - first
            if backoff.counter < 0:
                raise SimulationError(f"station {backoff.station} AC{backoff.ac} missed its "
                                      f"transmit boundary before t={self.env.now:.9f}")
        self.step = last
        self.idle_run += slots
        self.boundary += slots * self.sim.slot

    def _transmit(self, fired: List[Backoff]):
        """Busy virtual slot: AC0 wins inside a station, more than one sender collides"""
        sim = self.sim
        tally = self.tally
        t0 = self.env.now
        by_station: Dict[int, List[Backoff]] = {}
        for backoff in fired:
            by_station.setdefault(backoff.station, []).append(backoff)
        senders: List[Backoff] = []
        losers: List[Backoff] = []
        for station in sorted(by_station):
            group = sorted(by_station[station], key=lambda backoff: backoff.ac)
            senders.append(group[0])
            losers.extend(group[1:])

        copies = [draw_copies(self.rng, sim.p_preamble, sim.p_decode) for _ in senders]
        durations = [k * sim.t_tr + (k - 1) * sim.sifs for k in copies]
        tally.bursts += len(senders)
        for k in copies:
            tally.z_counts[k - 1] += 1
        collided = len(senders) > 1
        if not collided:
            tally.successes += 1

        fired_ids = {id(backoff) for backoff in fired}
        self.backoffs = [backoff for backoff in self.backoffs if id(backoff) not in fired_ids]

        yield self.env.timeout(max(durations) + sim.busy_tail)
        self.step += 1
        self.idle_run = 0
        self.boundary = self.env.now
        for backoff in self.backoffs:
            if backoff.admitted and backoff.offset == 0:
                backoff.counter -= 1

        for backoff in losers:
            backoff.done.succeed(Attempt(INTERNAL, t0))
        for backoff, duration in zip(senders, durations):
            backoff.done.succeed(Attempt(EXTERNAL if collided else SUCCESS, t0 + duration))


class EDCASimulator:
    """Runs independent replications of the EDCA simulation"""

    def __init__(self, config: SimConfig):
        """
        Initialize the simulator

        Args:
            config: Scenario, duration, warmup, seed, number of runs and arrival clock
        """
        self.config = config
        scenario = config.scenario
        self.n_stations = scenario.n_stations
        self.slot = scenario.phy.slot_time
        self.sifs = scenario.phy.sifs
        self.t_tr = transmission_profile(scenario).t_tr
        self.p_preamble = scenario.detection.p_preamble
        self.p_decode = scenario.detection.p_decode
        aifsn = [ac.aifsn for ac in scenario.ac]
        self.offsets = [n - min(aifsn) for n in aifsn]
        self.busy_tail = self.sifs + min(aifsn) * self.slot
        self.windows = [[cw_schedule(ac, j) for j in range(ac.retry_limit + 1)] for ac in scenario.ac]
        self.retry_limits = [ac.retry_limit for ac in scenario.ac]

    def seed_for(self, run: int) -> int:
        return (self.config.rng_seed + run) % 2 ** 64

    def _arrivals(self, env: simpy.Environment, channel: Channel, source: ArrivalSource,
                  queue: simpy.Store):
        for gap in source.gaps():
            if source.clock == "slot":
                yield channel.after_steps(gap)
            else:
                yield env.timeout(gap)
            yield queue.put(env.now)

    def _access_category(self, channel: Channel, station: int, ac: int,
                         queue: Optional[simpy.Store], rng: np.random.Generator, tally: Tally):
        """Head-of-line packet loop: back off, transmit, retry until success or the retry limit"""
        while True:
            if queue is not None:
                yield queue.get()
            start = None
            for window in self.windows[ac]:
                backoff = channel.contend(station, ac, int(rng.integers(0, window)))
                attempt = yield backoff.done
                if start is None:
                    start = backoff.start
                if attempt.status == SUCCESS:
                    break
                if attempt.status == INTERNAL:
                    tally.internal[ac] += 1
                else:
                    tally.external[ac] += 1
            else:
                tally.drops[ac] += 1
            tally.record(ac, start, attempt.end)

    def run_once(self, run: int = 0) -> SimStats:
        """
        Simulate one replication

        Args:
            run: Replication index; the generator is seeded with rng_seed + run

        Returns:
            SimStats: Delay statistics of packets whose backoff starts after warmup
        """
        seed = self.seed_for(run)
        rng = np.random.default_rng(seed)
        scenario = self.config.scenario
        duration = self.config.sim_duration
        tally = Tally(warmup=self.config.effective_warmup)

        env = simpy.Environment()
        channel = Channel(env, self, rng, tally, duration)
        for station in range(self.n_stations):
            for ac, category in enumerate(scenario.ac):
                source = ArrivalSource(category.arrival, self.config.arrival_clock, self.slot, rng)
                queue = None
                if not source.saturated:
                    queue = simpy.Store(env)
                    env.process(self._arrivals(env, channel, source, queue))
                env.process(self._access_category(channel, station, ac, queue, rng, tally))
        env.run(until=duration)

        per_ac = tuple(tally.delays[a].to_ac_stats(tally.internal[a], tally.external[a], tally.drops[a])
                       for a in range(2))
        logger.debug(f"Run {run} (seed {seed}): {tally.bursts} bursts, {tally.successes} successes, "
                     f"{channel.step} virtual slots, samples={[d.count for d in tally.delays]}")
        return SimStats(per_ac=per_ac, z_counts=tuple(tally.z_counts), successes=tally.successes,
                        bursts=tally.bursts, seed=seed)

    def run(self, workers: int = 1) -> SimStats:
        """
        Run every replication and pool the results

        Args:
            workers: Number of worker processes; 1 runs sequentially

        Returns:
            SimStats: Pooled statistics with the per-run statistics attached
        """
        runs = range(self.config.runs)
        try:
            if workers > 1 and self.config.runs > 1:
                with ProcessPoolExecutor(max_workers=workers) as executor:
                    per_run = list(executor.map(self.run_once, runs))
            else:
                per_run = [self.run_once(r) for r in runs]
        except SimulationError:
            raise
        except Exception as e:
            logger.error(f"Simulation failed: {e}")
            raise SimulationError(f"simulation failed: {e}") from e

        pooled = pool_stats(per_run)
        logger.info(f"Simulated {self.config.runs} run(s) of {self.config.sim_duration}s "
                    f"with N={self.n_stations} on the {self.config.arrival_clock} clock: "
                    f"AC0 mean={pooled.per_ac[0].mean:.6g}s, AC1 mean={pooled.per_ac[1].mean:.6g}s")
        return pooled


def pool_stats(per_run: Sequence[SimStats]) -> SimStats:
    """Order-independent aggregation of independent runs"""
    ordered = sorted(per_run, key=lambda stats: stats.seed)
    per_ac = []
    for a in range(2):
        merged = RunningStats()
        for stats in ordered:
            merged = merged.merge(RunningStats.from_ac_stats(stats.per_ac[a]))
        per_ac.append(merged.to_ac_stats(
            internal=sum(stats.per_ac[a].internal_collisions for stats in ordered),
            external=sum(stats.per_ac[a].external_collisions for stats in ordered),
            drops=sum(stats.per_ac[a].drops for stats in ordered),
        ))
    z_counts = tuple(sum(stats.z_counts[k] for stats in ordered) for k in range(MAX_COPIES))
    return SimStats(
        per_ac=tuple(per_ac),
        z_counts=z_counts,
        successes=sum(stats.successes for stats in ordered),
        bursts=sum(stats.bursts for stats in ordered),
        seed=ordered[0].seed if ordered else -1,
        per_run=tuple(ordered),
    )


def run_simulation(config: SimConfig, workers: int = 1) -> SimStats:
    return EDCASimulator(config).run(workers)


def replay_determinism(config: SimConfig) -> bool:
    """True when two runs with the configured seed produce identical statistics"""
    first = run_simulation(config)
    second = run_simulation(config)
    # repr keeps NaN fields comparable and is exact for floats
    return repr(first) == repr(second)
