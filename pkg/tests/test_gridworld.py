import numpy as np
import pytest

from navmem.gridworld import (
    Action,
    AgentPose,
    Heading,
    apply_action,
    bfs_distance_field,
    generate_world,
    largest_free_component,
    load_world,
    observe,
    save_world,
    shortest_path,
    success_check,
    world_from_ascii,
)
from navmem.rng import stream

OPEN_9 = world_from_ascii([
    "#########",
    "#.......#",
    "#.......#",
    "#.......#",
    "#.......#",
    "#.......#",
    "#.......#",
    "#.......#",
    "#########",
])


class TestGenerateWorld:
    def test_density_zero_all_free_one_component(self):
        world = generate_world(3, 12, 10, 0.0)
        interior = world.occupancy[1:-1, 1:-1]
        assert not interior.any()
        assert len(largest_free_component(world)) == (12 - 2) * (10 - 2)

    def test_same_seed_identical(self):
        a = generate_world(42, 15, 15, 0.2)
        b = generate_world(42, 15, 15, 0.2)
        assert np.array_equal(a.occupancy, b.occupancy)

    def test_connectivity_property_holds(self):
        world = generate_world(42, 15, 15, 0.2)
        free = int((~world.occupancy).sum())
        assert len(largest_free_component(world)) >= 0.6 * free

    def test_border_blocked(self):
        world = generate_world(7, 11, 13, 0.3)
        occ = world.occupancy
        assert occ[0, :].all() and occ[-1, :].all() and occ[:, 0].all() and occ[:, -1].all()

    def test_density_out_of_range(self):
        with pytest.raises(ValueError):
            generate_world(0, 10, 10, 0.5)


class TestApplyAction:
    def test_forward_into_wall_is_noop(self):
        pose = AgentPose(1, 1, Heading.NORTH)  # border at y=0
        assert apply_action(OPEN_9, pose, Action.MOVE_FORWARD) == pose

    def test_four_lefts_identity(self):
        pose = AgentPose(4, 4, Heading.EAST)
        for _ in range(4):
            pose = apply_action(OPEN_9, pose, Action.TURN_LEFT)
        assert pose == AgentPose(4, 4, Heading.EAST)

    def test_forward_east_increments_x(self):
        pose = AgentPose(4, 4, Heading.EAST)
        out = apply_action(OPEN_9, pose, Action.MOVE_FORWARD)
        assert (out.x, out.y, out.heading) == (5, 4, Heading.EAST)

    def test_stop_leaves_pose(self):
        pose = AgentPose(2, 3, Heading.SOUTH)
        assert apply_action(OPEN_9, pose, Action.STOP) == pose

    def test_never_yields_blocked_pose(self):
        rng = stream(0, "apply_prop")
        world = generate_world(5, 15, 15, 0.3)
        free = world.free_cells()
        for _ in range(500):
            x, y = free[int(rng.integers(0, len(free)))]
            pose = AgentPose(x, y, Heading(int(rng.integers(0, 4))))
            out = apply_action(world, pose, Action(int(rng.integers(0, 4))))
            assert not world.blocked(out.x, out.y)


class TestObserve:
    def test_heading_invariance(self):
        world = generate_world(11, 15, 15, 0.2)
        cell = sorted(largest_free_component(world))[5]
        patches = [
            observe(world, AgentPose(cell[0], cell[1], h)) for h in Heading
        ]
        for p in patches[1:]:
            assert np.array_equal(p.grid, patches[0].grid)
            assert np.array_equal(p.x_band, patches[0].x_band)
            assert np.array_equal(p.y_band, patches[0].y_band)

    def test_open_area_all_visible(self):
        # 19x19 so the full radius-4 neighborhood is interior.
        world = world_from_ascii(
            ["#" * 19] + ["#" + "." * 17 + "#"] * 17 + ["#" * 19]
        )
        patch = observe(world, AgentPose(9, 9, Heading.NORTH))
        assert (patch.grid != 0.5).all()
        assert (patch.grid == 0.0).all()

    def test_wall_hides_cells_behind(self):
        # Wall segment directly north of the agent at distance 2.
        rows = [
            "###########",
            "#.........#",
            "#.........#",
            "#...###...#",
            "#.........#",
            "#.........#",
            "#.........#",
            "#.........#",
            "#.........#",
            "#.........#",
            "###########",
        ]
        world = world_from_ascii(rows)
        patch = observe(world, AgentPose(5, 5, Heading.NORTH))
        r = patch.radius
        # wall cell itself visible and blocked
        assert patch.grid[r - 2, r] == 1.0
        # cells straight behind the wall are unknown
        assert patch.grid[r - 3, r] == 0.5
        assert patch.grid[r - 4, r] == 0.5
        # off to the side, line of sight is clear
        assert patch.grid[r - 3, r - 3] == 0.0

    def test_band_encoding_positions(self):
        world = generate_world(13, 16, 16, 0.0)
        patch = observe(world, AgentPose(1, 14, Heading.NORTH))
        assert patch.x_band.argmax() == 1 * 24 // 16
        assert patch.y_band.argmax() == 14 * 24 // 16
        assert patch.x_band.sum() == 1.0 and patch.y_band.sum() == 1.0

    def test_band_scale_in_flattened_input(self):
        from navmem.gridworld import BAND_SCALE, patch_input_dim

        world = generate_world(13, 16, 16, 0.0)
        patch = observe(world, AgentPose(3, 3, Heading.NORTH))
        flat = patch.flatten()
        assert flat.shape == (patch_input_dim(),)
        assert flat.max() == BAND_SCALE  # band bits amplified


class TestShortestPath:
    def test_same_cell(self):
        length, path = shortest_path(OPEN_9, (3, 3), (3, 3))
        assert length == 0.0 and path == [(3, 3)]

    def test_eight_hop_geodesic_is_two_meters(self):
        world = world_from_ascii([
            "###########",
            "#.........#",
            "###########",
        ])
        length, _ = shortest_path(world, (1, 1), (9, 1))
        assert length == pytest.approx(2.0)

    def test_u_detour_hand_counted(self):
        # Wall between a and b forces a route around the south end:
        # a=(2,1), b=(6,1); direct would be 4 hops, detour is 8.
        world = world_from_ascii([
            "#########",
            "#...#...#",
            "#...#...#",
            "#...#...#",
            "#.......#",
            "#########",
        ])
        length, path = shortest_path(world, (2, 1), (6, 1))
        assert length == pytest.approx(10 * 0.25)
        assert path[0] == (2, 1) and path[-1] == (6, 1)

    def test_symmetry_property(self):
        world = generate_world(21, 17, 17, 0.25)
        comp = sorted(largest_free_component(world))
        rng = stream(0, "sym")
        for _ in range(200):
            a = comp[int(rng.integers(0, len(comp)))]
            b = comp[int(rng.integers(0, len(comp)))]
            la, _ = shortest_path(world, a, b)
            lb, _ = shortest_path(world, b, a)
            assert la == lb

    def test_disconnected_returns_inf(self):
        world = world_from_ascii([
            "#####",
            "#.#.#",
            "#####",
        ])
        length, path = shortest_path(world, (1, 1), (3, 1))
        assert length == float("inf") and path == []

    def test_blocked_endpoint_raises(self):
        with pytest.raises(ValueError):
            shortest_path(OPEN_9, (0, 0), (3, 3))

    def test_bfs_lower_bounds_walks(self):
        world = generate_world(9, 13, 13, 0.2)
        comp = sorted(largest_free_component(world))
        rng = stream(3, "walk")
        for _ in range(50):
            start = comp[int(rng.integers(0, len(comp)))]
            pose = AgentPose(start[0], start[1], Heading.NORTH)
            moved = 0.0
            for _ in range(40):
                action = Action(int(rng.integers(1, 4)))
                new = apply_action(world, pose, action)
                if new.cell != pose.cell:
                    moved += world.cell_size
                pose = new
            oracle, _ = shortest_path(world, start, pose.cell)
            assert oracle <= moved + 1e-12


class TestSuccessCheck:
    def test_on_goal(self):
        assert success_check((4, 4), (4, 4))

    def test_four_cells_one_meter_inclusive(self):
        assert success_check((8, 4), (4, 4))  # 4 * 0.25 = 1.0 m

    def test_five_cells_fails(self):
        assert not success_check((9, 4), (4, 4))  # 1.25 m

    def test_euclidean_diagonal(self):
        assert success_check((6, 6), (4, 4)) is True  # sqrt(8)*0.25 ~ 0.707
        assert success_check((7, 7), (4, 4)) is False  # sqrt(18)*0.25 ~ 1.06


class TestWorldFiles:
    def test_roundtrip(self, tmp_path):
        world = generate_world(17, 14, 11, 0.2)
        path = tmp_path / "w.txt"
        save_world(path, world)
        loaded = load_world(path)
        assert loaded.width == world.width and loaded.height == world.height
        assert loaded.cell_size == world.cell_size
        assert np.array_equal(loaded.occupancy, world.occupancy)

    def test_header_checked(self, tmp_path):
        path = tmp_path / "w.txt"
        path.write_text("BOGUS 3 3 0.25\n###\n#.#\n###\n")
        with pytest.raises(ValueError, match="header"):
            load_world(path)

    def test_ragged_rejected(self, tmp_path):
        path = tmp_path / "w.txt"
        path.write_text("MGWORLD1 3 3 0.25\n###\n#.##\n###\n")
        with pytest.raises(ValueError, match="width"):
            load_world(path)

    def test_open_border_rejected(self, tmp_path):
        path = tmp_path / "w.txt"
        path.write_text("MGWORLD1 3 3 0.25\n###\n#..\n###\n")
        with pytest.raises(ValueError, match="border"):
            load_world(path)


class TestBfsField:
    def test_multi_source(self):
        field = bfs_distance_field(OPEN_9, [(1, 1), (7, 7)])
        assert field[1, 1] == 0 and field[7, 7] == 0
        assert field[1, 7] == 6  # nearer of the two sources
