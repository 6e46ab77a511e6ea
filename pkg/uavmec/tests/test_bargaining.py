import math
import unittest

import numpy as np

from uavmec import bargaining
from uavmec import constants
from uavmec import cost
from uavmec.tests import fakes


def _partition(lam_i, lam_j, horizon):
    product = lam_i * lam_j
    power = product ** math.ceil(horizon / 2)
    own = lam_i - (1 - lam_i) * (1 - power) / (1 - product)
    other = (1 - lam_i) * (2 - product - power) / (1 - product)
    return own, other


class TestPartition(unittest.TestCase):
    def test_patient_proposer_takes_all(self):
        own, other = bargaining.rubinstein_partition(1.0, 0.4, 2)

        self.assertEqual(1.0, own)
        self.assertEqual(0.0, other)

    def test_half_discounts(self):
        self.assertEqual(
            (0.0, 1.0), bargaining.rubinstein_partition(0.5, 0.5, 2)
        )

    def test_fully_patient_is_degenerate(self):
        with self.assertRaises(bargaining.DegenerateDiscounts):
            bargaining.rubinstein_partition(1.0, 1.0, 2)

    def test_matches_closed_form(self):
        rng = np.random.default_rng(2)
        for _ in range(1000):
            lam_i, lam_j = rng.uniform(0.0, 0.999, size=2)
            horizon = int(rng.integers(1, 20))

            result = bargaining.rubinstein_partition(lam_i, lam_j, horizon)

            for got, want in zip(result, _partition(lam_i, lam_j, horizon)):
                self.assertAlmostEqual(
                    want, got, delta=1e-12 * max(1.0, abs(want))
                )
            self.assertAlmostEqual(1.0, sum(result), delta=1e-9)

    def test_server_first_swaps_roles(self):
        partitions = bargaining.partitions_for(0.9, 0.6, 2)

        self.assertEqual(
            bargaining.rubinstein_partition(0.6, 0.9, 2),
            partitions.server_first,
        )
        self.assertEqual(
            partitions.server_first[1],
            partitions.md_share(bargaining.Proposer.SERVER),
        )
        self.assertEqual(
            partitions.md_first[0],
            partitions.md_share(bargaining.Proposer.MD),
        )


class TestOptimalPrice(unittest.TestCase):
    def setUp(self):
        super().setUp()
        self.surplus = bargaining.PriceSurplus(floor=0.1, ceiling=0.5)

    def _price(self, share):
        partitions = bargaining.Partitions((share, 1 - share), (0.0, 1.0))
        return bargaining.optimal_price(
            self.surplus, partitions, bargaining.Proposer.MD
        )

    def test_interpolates_surplus(self):
        self.assertEqual(0.5, self._price(0.0))
        self.assertAlmostEqual(0.1, self._price(1.0))
        self.assertAlmostEqual(0.3, self._price(0.5))

    def test_clamps_into_bounds(self):
        self.assertEqual(0.1, self._price(1.5))
        self.assertEqual(0.5, self._price(-0.5))


class TestPriceBounds(unittest.TestCase):
    def setUp(self):
        super().setUp()
        self.md = fakes.make_md(transmit_power=0.1)
        self.server = fakes.make_server()
        self.task = fakes.make_task(size=2e6, cycles=2e9, deadline=3.0)
        self.link = fakes.make_link(rate=10e6)
        self.capacity = fakes.make_capacity(self.server)

    def test_matches_closed_form(self):
        f = 20e9
        surplus = bargaining.price_bounds(
            self.md, self.server, self.task, f, self.link, self.capacity
        )

        energy = 1e-28 * f**2 * 2e9
        floor = 0.5 * energy * 1.0 * 20e9 / (0.5 * 1000.0 * f)
        delay = 0.2 + 2e9 / f
        ceiling = (
            0.5 * math.log(1 + 3.0 - delay) / (0.5 * math.log(4.0))
            - 0.1 * 2e6 / (10e6 * 3.0)
        ) * 5.0 * constants.GHZ / f
        self.assertAlmostEqual(floor, surplus.floor)
        self.assertAlmostEqual(ceiling, surplus.ceiling)
        self.assertTrue(surplus.viable)

    def test_pure_revenue_server_has_zero_floor(self):
        server = fakes.make_server(weight=1.0)

        surplus = bargaining.price_bounds(
            self.md, server, self.task, 20e9, self.link, self.capacity
        )

        self.assertEqual(0.0, surplus.floor)

    def test_delay_only_md_has_sentinel_ceiling(self):
        md = fakes.make_md(weight=1.0)

        surplus = bargaining.price_bounds(
            md, self.server, self.task, 20e9, self.link, self.capacity
        )

        self.assertEqual(1e9, surplus.ceiling)

    def test_no_surplus(self):
        # an energy hungry server cannot undercut what the MD will pay
        server = fakes.make_server(capacitance=1e-26)

        with self.assertRaises(bargaining.NoViableTrade) as ctx:
            bargaining.price_bounds(
                self.md, server, self.task, 20e9, self.link, self.capacity
            )

        self.assertLessEqual(ctx.exception.surplus.surplus, 0.0)


class TestOptimalAllocation(unittest.TestCase):
    def setUp(self):
        super().setUp()
        self.md = fakes.make_md(transmit_power=0.1)
        self.server = fakes.make_server()
        self.link = fakes.make_link(rate=10e6)
        self.capacity = fakes.make_capacity(self.server)

    def _utility(self, task, f, price):
        return cost.md_qoe(
            self.md,
            task,
            cost.edge_delay(task, self.link.rate, f),
            cost.upload_energy(task, self.md.transmit_power, self.link.rate),
            cost.payment(f, price),
        )

    def test_budget_excludes_deadline(self):
        task = fakes.make_task(size=2e6, cycles=2e9, deadline=0.5)

        with self.assertRaises(bargaining.InfeasibleAllocation):
            bargaining.optimal_allocation(
                self.md, self.server, task, 10.0, self.link, self.capacity
            )

    def test_free_capacity_takes_the_cap(self):
        task = fakes.make_task()

        f = bargaining.optimal_allocation(
            self.md, self.server, task, 0.0, self.link, self.capacity
        )

        self.assertEqual(20e9, f)

    def test_matches_grid_search(self):
        rng = np.random.default_rng(4)
        checked = 0
        for _ in range(300):
            task = fakes.make_task(
                size=float(rng.uniform(1e6, 5e6)),
                cycles=float(rng.uniform(1e9, 5e9)),
                deadline=float(rng.uniform(1.0, 5.0)),
            )
            price = float(rng.uniform(0.01, 1.0))
            try:
                lower, upper = bargaining.allocation_box(
                    self.md,
                    self.server,
                    task,
                    price,
                    self.link,
                    self.capacity,
                )
            except bargaining.InfeasibleAllocation:
                continue
            f = bargaining.optimal_allocation(
                self.md, self.server, task, price, self.link, self.capacity
            )
            grid = np.linspace(lower, upper, 2000)
            best = max(self._utility(task, g, price) for g in grid)

            self.assertTrue(lower <= f <= upper)
            self.assertGreaterEqual(
                self._utility(task, f, price), best - 1e-3 * abs(best) - 1e-9
            )
            checked += 1
        self.assertGreater(checked, 60)


class TestNegotiate(unittest.TestCase):
    def setUp(self):
        super().setUp()
        self.md = fakes.make_md(transmit_power=0.1)
        self.server = fakes.make_server()
        self.task = fakes.make_task(size=2e6, cycles=2e9, deadline=3.0)
        self.link = fakes.make_link(rate=10e6)
        self.capacity = fakes.make_capacity(self.server)

    def test_immediate_consensus(self):
        deal = bargaining.negotiate(
            self.md, self.server, self.task, self.link, self.capacity
        )

        self.assertEqual(1, deal.rounds)
        self.assertEqual("md", deal.proposer)
        self.assertEqual(20e9, deal.allocated_cycles)
        self.assertGreater(deal.md_utility, 0.0)
        self.assertGreater(deal.server_utility, 0.0)
        self.assertAlmostEqual(0.3, deal.delay)
        # the utilities are the ones of the agreed price and allocation
        self.assertAlmostEqual(
            cost.md_qoe(
                self.md,
                self.task,
                deal.delay,
                deal.upload_energy,
                deal.payment,
            ),
            deal.md_utility,
        )

    def test_no_idle_core(self):
        capacity = bargaining.CapacityView(1, 0, 0.0)

        with self.assertRaises(bargaining.NoDeal) as ctx:
            bargaining.negotiate(
                self.md, self.server, self.task, self.link, capacity
            )

        self.assertEqual(0, ctx.exception.rounds)

    def test_hopeless_trade(self):
        server = fakes.make_server(capacitance=1e-24)

        with self.assertRaises(bargaining.NoDeal):
            bargaining.negotiate(
                self.md, server, self.task, self.link, self.capacity
            )

    def test_is_deterministic(self):
        a = bargaining.negotiate(
            self.md, self.server, self.task, self.link, self.capacity
        )
        b = bargaining.negotiate(
            self.md, self.server, self.task, self.link, self.capacity
        )

        self.assertEqual(a, b)

    def test_individual_rationality_on_random_instances(self):
        rng = np.random.default_rng(9)
        deals = 0
        for n in range(10000):
            md = fakes.make_md(
                transmit_power=float(rng.uniform(0.01, 1.0)),
                weight=float(rng.uniform(0.2, 0.9)),
                budget=float(rng.uniform(1.0, 10.0)),
            )
            size = float(rng.uniform(1e6, 5e6))
            task = fakes.make_task(
                task_id=n,
                size=size,
                cycles=size * float(rng.uniform(500, 1500)),
                deadline=float(rng.uniform(0.5, 5.0)),
            )
            cores = int(rng.integers(1, 5))
            if rng.random() < 0.5:
                server = fakes.make_server(
                    core_count=cores,
                    core_capacity=float(rng.uniform(20e9, 40e9)),
                    weight=float(rng.uniform(0.3, 0.9)),
                )
            else:
                server = fakes.make_uav(
                    core_count=cores,
                    core_capacity=float(rng.uniform(10e9, 20e9)),
                    weight=float(rng.uniform(0.3, 0.9)),
                )
                server.speed = float(rng.uniform(0.0, 25.0))
            link = fakes.make_link(rate=float(rng.uniform(1e6, 50e6)))
            capacity = fakes.make_capacity(server)
            try:
                deal = bargaining.negotiate(md, server, task, link, capacity)
            except bargaining.NoDeal:
                continue
            deals += 1

            self.assertGreater(deal.md_utility, 0.0)
            self.assertGreater(deal.server_utility, 0.0)
            self.assertLessEqual(deal.payment, md.budget * (1 + 1e-9))
            self.assertLessEqual(deal.delay, task.deadline)
            self.assertLessEqual(
                deal.allocated_cycles,
                min(capacity.available_cycles, server.core_capacity),
            )
            surplus = bargaining.price_bounds(
                md, server, task, deal.allocated_cycles, link, capacity
            )
            self.assertGreaterEqual(
                deal.unit_price, surplus.floor * (1 - 1e-9)
            )
            self.assertLessEqual(
                deal.unit_price, surplus.ceiling * (1 + 1e-9)
            )
        self.assertGreater(deals, 100)
