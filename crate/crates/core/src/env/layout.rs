//! Static task layouts: walls, doors, switches, spawn points and target zones.

use serde::{Deserialize, Serialize};

use super::{Pos, TaskId};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cell {
    Free,
    Wall,
    Door(u8),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Switch {
    pub pos: Pos,
    /// Indices into [`Layout::doors`] this switch opens while occupied.
    pub opens: Vec<u8>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Layout {
    pub task: TaskId,
    pub rows: u8,
    pub cols: u8,
    pub walls: Vec<Pos>,
    pub doors: Vec<Pos>,
    pub switches: Vec<Switch>,
    pub spawn: Vec<Pos>,
    pub target_zone: Vec<Pos>,
    pub box_start: Option<Pos>,
    #[serde(skip)]
    cells: Vec<Cell>,
    #[serde(skip)]
    target_mask: Vec<bool>,
}

impl PartialEq for Layout {
    fn eq(&self, other: &Self) -> bool {
        self.task == other.task
            && self.rows == other.rows
            && self.cols == other.cols
            && self.walls == other.walls
            && self.doors == other.doors
            && self.switches == other.switches
            && self.spawn == other.spawn
            && self.target_zone == other.target_zone
            && self.box_start == other.box_start
    }
}

impl Layout {
    fn empty(task: TaskId, n: u8, agents: usize) -> Self {
        Self {
            task,
            rows: n,
            cols: n,
            walls: Vec::new(),
            doors: Vec::new(),
            switches: Vec::new(),
            spawn: vec![Pos::new(0, 0); agents],
            target_zone: Vec::new(),
            box_start: None,
            cells: Vec::new(),
            target_mask: Vec::new(),
        }
    }

    /// Two rooms split by a vertical wall with one door. Switch 1 sits in the
    /// left room, switch 2 in the right one; either opens the door.
    pub fn pass(n: u8, agents: usize) -> Self {
        let mut l = Self::empty(TaskId::Pass, n, agents);
        let wall = n / 2;
        let door = Pos::new(n / 2, wall);
        for r in 0..n {
            if r != door.row {
                l.walls.push(Pos::new(r, wall));
            }
        }
        l.doors.push(door);
        l.switches.push(Switch {
            pos: Pos::new(n - 2, wall / 2),
            opens: vec![0],
        });
        l.switches.push(Switch {
            pos: Pos::new(1, wall + (n - wall) / 2),
            opens: vec![0],
        });
        for r in 0..n {
            for c in wall + 1..n {
                l.target_zone.push(Pos::new(r, c));
            }
        }
        l.indexed()
    }

    /// Left room plus three stacked rooms on the right, each behind its own
    /// door. Switch 1 (left room) opens every door; switches 2..4 open the door
    /// of the room they sit in. The upper-right room is the target.
    pub fn secret_room(n: u8, agents: usize) -> Self {
        let mut l = Self::empty(TaskId::SecretRoom, n, agents);
        let wall = n / 2;
        let h1 = n / 3;
        let h2 = 2 * n / 3;
        let rooms = [(0u8, h1 - 1), (h1 + 1, h2 - 1), (h2 + 1, n - 1)];
        let door_rows: Vec<u8> = rooms.iter().map(|(a, b)| (a + b) / 2).collect();
        for r in 0..n {
            if !door_rows.contains(&r) {
                l.walls.push(Pos::new(r, wall));
            }
        }
        for c in wall + 1..n {
            l.walls.push(Pos::new(h1, c));
            l.walls.push(Pos::new(h2, c));
        }
        for &r in &door_rows {
            l.doors.push(Pos::new(r, wall));
        }
        l.switches.push(Switch {
            pos: Pos::new(n - 2, wall / 2),
            opens: vec![0, 1, 2],
        });
        for (k, &(top, bottom)) in rooms.iter().enumerate() {
            l.switches.push(Switch {
                pos: Pos::new((top + bottom) / 2, n - 2),
                opens: vec![k as u8],
            });
        }
        let (top, bottom) = rooms[0];
        for r in top..=bottom {
            for c in wall + 1..n {
                l.target_zone.push(Pos::new(r, c));
            }
        }
        l.indexed()
    }

    pub fn push_box(n: u8, agents: usize) -> Self {
        let mut l = Self::empty(TaskId::PushBox, n, agents);
        l.box_start = Some(Pos::new(n / 2, n / 2));
        l.indexed()
    }

    pub fn open_field(task: TaskId, n: u8, agents: usize) -> Self {
        Self::empty(task, n, agents).indexed()
    }

    /// Rebuilds the cell index; must be called after deserializing.
    pub fn indexed(mut self) -> Self {
        let n = self.rows as usize * self.cols as usize;
        self.cells = vec![Cell::Free; n];
        for w in &self.walls {
            let i = self.idx(*w);
            self.cells[i] = Cell::Wall;
        }
        for (k, d) in self.doors.iter().enumerate() {
            let i = self.idx(*d);
            self.cells[i] = Cell::Door(k as u8);
        }
        self.target_mask = vec![false; n];
        for p in &self.target_zone {
            let i = self.idx(*p);
            self.target_mask[i] = true;
        }
        self
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        let l: Layout = serde_json::from_str(s)?;
        Ok(l.indexed())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("layout serializes")
    }

    fn idx(&self, p: Pos) -> usize {
        p.row as usize * self.cols as usize + p.col as usize
    }

    pub fn in_bounds(&self, row: i32, col: i32) -> bool {
        row >= 0 && col >= 0 && row < self.rows as i32 && col < self.cols as i32
    }

    pub fn cell(&self, p: Pos) -> Cell {
        self.cells[self.idx(p)]
    }

    pub fn in_target(&self, p: Pos) -> bool {
        self.target_mask[self.idx(p)]
    }

    pub fn is_wall(&self, p: Pos) -> bool {
        matches!(self.cell(p), Cell::Wall)
    }

    /// Cell is adjacent (4-neighbourhood) to a wall cell or to the outer boundary.
    pub fn against_wall(&self, p: Pos) -> bool {
        let (r, c) = (p.row as i32, p.col as i32);
        [(-1, 0), (1, 0), (0, -1), (0, 1)].iter().any(|(dr, dc)| {
            let (nr, nc) = (r + dr, c + dc);
            !self.in_bounds(nr, nc) || self.is_wall(Pos::new(nr as u8, nc as u8))
        })
    }

    pub fn switch_at(&self, p: Pos) -> Option<usize> {
        self.switches.iter().position(|s| s.pos == p)
    }

    pub fn free_cells(&self) -> impl Iterator<Item = Pos> + '_ {
        (0..self.rows).flat_map(move |r| {
            (0..self.cols)
                .map(move |c| Pos::new(r, c))
                .filter(move |p| matches!(self.cell(*p), Cell::Free))
        })
    }

    /// Door-open flags given which cells are occupied.
    pub fn doors_open(&self, occupied: impl Fn(Pos) -> bool) -> Vec<bool> {
        let mut open = vec![false; self.doors.len()];
        for s in &self.switches {
            if occupied(s.pos) {
                for d in &s.opens {
                    open[*d as usize] = true;
                }
            }
        }
        open
    }
}
