"""A deterministic list scheduler over exclusive resources.

Tasks have a resource, a duration and dependencies. Whenever a resource is idle it starts
the best ready task: first-come-first-serve tasks by earliest ready time, then
last-come-first-serve tasks by latest ready time. All completions at one instant are
processed before anything new is dispatched.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Iterable, Mapping

from ..errors import ContractViolation

GPU = 0
CPU = 1
D2H = 2
H2D = 3
SYNC = 4  # zero-duration barriers, never traced


@dataclass(frozen=True)
class Event:
    resource: str
    label: str
    layer: int
    iteration: int
    start: float
    end: float
    ready: float
    nbytes: float = 0.0

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass(eq=False)
class _Task:
    resource: int
    duration: float
    label: str
    layer: int
    iteration: int
    deps: tuple[int, ...]
    lcfs: bool
    nbytes: float


class Scheduler:
    def __init__(self, resource_names: Mapping[int, str]) -> None:
        self.resource_names = dict(resource_names)
        self.tasks: list[_Task] = []

    def __len__(self) -> int:
        return len(self.tasks)

    def add(
        self,
        resource: int,
        duration: float,
        label: str,
        layer: int,
        iteration: int,
        deps: Iterable[int] = (),
        *,
        lcfs: bool = False,
        nbytes: float = 0.0,
    ) -> int:
        """Add a task and return its id. Dependencies may name tasks added later."""
        if resource not in self.resource_names:
            raise ContractViolation(f"unknown resource id {resource}")
        if duration < 0:
            raise ContractViolation(f"negative duration for {label} layer {layer}")
        tid = len(self.tasks)
        deps = tuple(sorted(set(deps)))
        self.tasks.append(
            _Task(resource, float(duration), label, layer, iteration, deps, lcfs, nbytes)
        )
        return tid

    def run(self) -> list[Event]:
        """Execute every task and return the events in start order (barriers excluded)."""
        n = len(self.tasks)
        for task in self.tasks:
            if task.deps and (task.deps[0] < 0 or task.deps[-1] >= n):
                raise ContractViolation(f"{task.label} layer {task.layer} names an unknown task")
        waiting = [len(t.deps) for t in self.tasks]
        dependents: list[list[int]] = [[] for _ in range(n)]
        for tid, task in enumerate(self.tasks):
            for dep in task.deps:
                dependents[dep].append(tid)

        queues: dict[int, list[tuple[int, float, int, int]]] = {
            r: [] for r in sorted(self.resource_names)
        }
        busy = {r: False for r in queues}
        ready_at = [0.0] * n
        completions: list[tuple[float, int, int, int]] = []
        events: list[Event] = []

        def release(tid: int, now: float) -> None:
            task = self.tasks[tid]
            ready_at[tid] = now
            key = (1, -now, -tid, tid) if task.lcfs else (0, now, tid, tid)
            heapq.heappush(queues[task.resource], key)

        for tid in range(n):
            if waiting[tid] == 0:
                release(tid, 0.0)

        now = 0.0
        finished = 0
        while True:
            for resource, queue in queues.items():
                if busy[resource] or not queue:
                    continue
                tid = heapq.heappop(queue)[3]
                task = self.tasks[tid]
                end = now + task.duration
                busy[resource] = True
                heapq.heappush(completions, (end, resource, task.layer, tid))
                if resource != SYNC:
                    events.append(
                        Event(
                            self.resource_names[resource],
                            task.label,
                            task.layer,
                            task.iteration,
                            now,
                            end,
                            ready_at[tid],
                            task.nbytes,
                        )
                    )
            if not completions:
                break
            now = completions[0][0]
            while completions and completions[0][0] == now:
                _, resource, _, tid = heapq.heappop(completions)
                busy[resource] = False
                finished += 1
                for nxt in dependents[tid]:
                    waiting[nxt] -= 1
                    if waiting[nxt] == 0:
                        release(nxt, now)

        if finished < n:
            raise ContractViolation(f"{n - finished} task(s) never became ready")
        return events
