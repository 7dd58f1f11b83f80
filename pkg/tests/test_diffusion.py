"""
Test Plan.

DiffusionSchedule:
    test_linear_schedule:
        step 0 is clean, cumulative products strictly decrease.
    test_invalid_betas:
        1. empty.
        2. beta = 1.
        3. beta = 0 when strict.
        4. unknown objective.
    test_training_step_range:
        step 0 and step T + 1 are rejected.

forward_diffuse, recover_x0, ddim_step:
    test_recover_clean_signal:
        recovering with the true noise returns x0, numpy and torch.
    test_ddim_to_zero:
        a DDIM step to step 0 with the true noise returns x0.
    test_ddim_velocity_prediction:
        a velocity prediction lands on the forward-diffused x at t_prev.
    test_ddim_order:
        t <= t_prev, expect failure.
    test_vanishing_alpha_bar:
        expect failure.

velocity:
    test_velocity_round_trip:
        x0 and noise are recovered from the velocity target.

sample_chain:
    test_timesteps:
        ...
    test_oracle_chain:
        a predictor that returns the exact noise lands on x0 for both
        objectives.
"""

import unittest

import numpy as np
import torch

from latentloco.diffusion import (
    DiffusionSchedule,
    ScheduleError,
    ddim_step,
    ddim_timesteps,
    forward_diffuse,
    noise_from_velocity,
    recover_x0,
    sample_chain,
    velocity_target,
    x0_from_velocity,
)


class DiffusionScheduleTest(unittest.TestCase):

    def test_linear_schedule(self):
        schedule = DiffusionSchedule.linear(50)
        self.assertEqual(schedule.steps, 50)
        self.assertEqual(schedule.alpha_bar(0), 1.0)
        self.assertTrue((np.diff(schedule.alpha_bars) < 0).all())

    def test_invalid_betas(self):
        with self.assertRaises(ScheduleError):
            DiffusionSchedule([])
        with self.assertRaises(ScheduleError):
            DiffusionSchedule([0.1, 1.0])
        with self.assertRaises(ScheduleError):
            DiffusionSchedule([0.0, 0.1])
        with self.assertRaises(ScheduleError):
            DiffusionSchedule([0.1], objective='score')
        # non-strict schedules accept a noiseless step.
        schedule = DiffusionSchedule.from_betas([0.0, 0.1])
        self.assertEqual(schedule.alpha_bar(1), 1.0)

    def test_training_step_range(self):
        schedule = DiffusionSchedule.linear(10)
        x0 = np.zeros(3)
        for t in (0, 11):
            with self.assertRaises(ScheduleError):
                forward_diffuse(x0, t, schedule, noise=np.zeros(3))


class ReverseStepTest(unittest.TestCase):

    def setUp(self):
        self.schedule = DiffusionSchedule.linear(50)
        rng = np.random.default_rng(0)
        self.x0 = rng.standard_normal(6)
        self.noise = rng.standard_normal(6)

    def test_recover_clean_signal(self):
        for t in (1, 17, 50):
            noised = forward_diffuse(self.x0, t, self.schedule, self.noise)
            recovered = recover_x0(noised.x_t, t, self.noise, self.schedule)
            self.assertTrue(np.allclose(recovered, self.x0, atol=1e-8))

        x0 = torch.as_tensor(self.x0)
        noise = torch.as_tensor(self.noise)
        noised = forward_diffuse(x0, 30, self.schedule, noise)
        recovered = recover_x0(noised.x_t, 30, noise, self.schedule)
        self.assertTrue(torch.allclose(recovered, x0, atol=1e-8))

    def test_batched_steps(self):
        x0 = torch.as_tensor(np.stack([self.x0, self.x0]))
        noise = torch.as_tensor(np.stack([self.noise, self.noise]))
        t = torch.tensor([5, 40])
        noised = forward_diffuse(x0, t, self.schedule, noise)
        recovered = recover_x0(noised.x_t, t, noise, self.schedule)
        self.assertTrue(torch.allclose(recovered, x0, atol=1e-8))
        self.assertFalse(torch.allclose(noised.x_t[0], noised.x_t[1]))

    def test_ddim_to_zero(self):
        noised = forward_diffuse(self.x0, 25, self.schedule, self.noise)
        x = ddim_step(noised.x_t, 25, 0, self.noise, self.schedule)
        self.assertTrue(np.allclose(x, self.x0, atol=1e-8))

    def test_ddim_intermediate(self):
        noised = forward_diffuse(self.x0, 25, self.schedule, self.noise)
        x = ddim_step(noised.x_t, 25, 10, self.noise, self.schedule)
        expected = forward_diffuse(self.x0, 10, self.schedule, self.noise)
        self.assertTrue(np.allclose(x, expected.x_t, atol=1e-8))

    def test_ddim_velocity_prediction(self):
        schedule = DiffusionSchedule.linear(50, objective='velocity')
        noised = forward_diffuse(self.x0, 25, schedule, self.noise)
        v = velocity_target(self.x0, self.noise, 25, schedule)
        x = ddim_step(noised.x_t, 25, 10, v, schedule)
        expected = forward_diffuse(self.x0, 10, schedule, self.noise)
        self.assertTrue(np.allclose(x, expected.x_t, atol=1e-8))

    def test_ddim_order(self):
        for t, t_prev in ((5, 5), (3, 7), (2, -1)):
            with self.assertRaises(ScheduleError):
                ddim_step(self.x0, t, t_prev, self.noise, self.schedule)

    def test_vanishing_alpha_bar(self):
        schedule = DiffusionSchedule([0.9] * 10)
        with self.assertRaises(ScheduleError):
            recover_x0(self.x0, 10, self.noise, schedule)


class VelocityTest(unittest.TestCase):

    def test_velocity_round_trip(self):
        schedule = DiffusionSchedule.linear(50, objective='velocity')
        rng = np.random.default_rng(1)
        x0 = rng.standard_normal(4)
        noise = rng.standard_normal(4)
        for t in (1, 20, 50):
            x_t = forward_diffuse(x0, t, schedule, noise).x_t
            v = velocity_target(x0, noise, t, schedule)
            self.assertTrue(np.allclose(
                x0_from_velocity(x_t, v, t, schedule), x0, atol=1e-10))
            self.assertTrue(np.allclose(
                noise_from_velocity(x_t, v, t, schedule), noise, atol=1e-10))


class SampleChainTest(unittest.TestCase):

    def test_timesteps(self):
        times = ddim_timesteps(50, 10)
        self.assertEqual(len(times), 11)
        self.assertEqual(times[0], 50)
        self.assertEqual(times[-1], 0)
        self.assertTrue(all(a > b for a, b in zip(times, times[1:])))
        self.assertEqual(ddim_timesteps(4, 4), [4, 3, 2, 1, 0])
        with self.assertRaises(ScheduleError):
            ddim_timesteps(10, 0)
        with self.assertRaises(ScheduleError):
            ddim_timesteps(10, 11)

    def test_oracle_chain(self):
        rng = np.random.default_rng(2)
        x0 = rng.standard_normal(5)
        x_T = rng.standard_normal(5)
        for objective in ('ddpm', 'velocity'):
            schedule = DiffusionSchedule.linear(50, objective=objective)

            def predict(x, t):
                alpha_bar = schedule.alpha_bar(t)
                noise = (x - np.sqrt(alpha_bar) * x0) / np.sqrt(1 - alpha_bar)
                if objective == 'velocity':
                    return velocity_target(x0, noise, t, schedule)
                return noise

            result = sample_chain(predict, x_T, schedule, 10)
            self.assertTrue(np.allclose(result, x0, atol=1e-8))
