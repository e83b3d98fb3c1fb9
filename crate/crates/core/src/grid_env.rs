//! Task-oriented navigation environment.
//!
//! A rectangular field of objects. The agent occupies one cell and moves one
//! cell per step. Any 3x3 neighborhood holding seven or more copies of one of
//! the four landmark objects is a typed region, and its center cell emits the
//! region type as a subgoal symbol when the agent steps onto it.

use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{AtigError, Result};
use crate::rng;

/// Number of region types (R0..R3).
pub const NUM_REGION_TYPES: usize = 4;

/// Minimum count of the defining object inside a 3x3 neighborhood.
const REGION_THRESHOLD: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ObjectKind {
    Building,
    Grass,
    Tree,
    /// Also called "rock"; both names denote the same object.
    Stone,
    Barrel,
    Tile,
}

impl ObjectKind {
    pub const ALL: [ObjectKind; 6] = [
        ObjectKind::Building,
        ObjectKind::Grass,
        ObjectKind::Tree,
        ObjectKind::Stone,
        ObjectKind::Barrel,
        ObjectKind::Tile,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn code(self) -> char {
        match self {
            ObjectKind::Building => 'B',
            ObjectKind::Grass => 'G',
            ObjectKind::Tree => 'T',
            ObjectKind::Stone => 'S',
            ObjectKind::Barrel => 'L',
            ObjectKind::Tile => 'F',
        }
    }

    pub fn from_code(c: char) -> Option<Self> {
        Some(match c {
            'B' => ObjectKind::Building,
            'G' => ObjectKind::Grass,
            'T' => ObjectKind::Tree,
            'S' | 'R' => ObjectKind::Stone,
            'L' => ObjectKind::Barrel,
            'F' => ObjectKind::Tile,
            _ => return None,
        })
    }

    /// The object whose 3x3 majority defines region type `t`.
    pub fn for_region(t: usize) -> Option<Self> {
        match t {
            0 => Some(ObjectKind::Building),
            1 => Some(ObjectKind::Tree),
            2 => Some(ObjectKind::Barrel),
            3 => Some(ObjectKind::Stone),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Action::ALL.get(i).copied()
    }

    pub fn code(self) -> char {
        match self {
            Action::Up => 'U',
            Action::Down => 'D',
            Action::Left => 'L',
            Action::Right => 'R',
        }
    }

    pub fn from_code(c: char) -> Option<Self> {
        match c {
            'U' => Some(Action::Up),
            'D' => Some(Action::Down),
            'L' => Some(Action::Left),
            'R' => Some(Action::Right),
            _ => None,
        }
    }

    fn delta(self) -> (isize, isize) {
        match self {
            Action::Up => (0, -1),
            Action::Down => (0, 1),
            Action::Left => (-1, 0),
            Action::Right => (1, 0),
        }
    }
}

/// Cell coordinate; `x` is the column, `y` the row (row 0 is the top line of
/// the environment file).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub x: usize,
    pub y: usize,
}

impl Cell {
    pub fn new(x: usize, y: usize) -> Self {
        Cell { x, y }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridMap {
    width: usize,
    height: usize,
    cells: Vec<ObjectKind>,
    start: Option<Cell>,
    slip: f64,
    labels: Vec<Option<usize>>,
}

impl GridMap {
    /// `cells` is row-major, `height` rows of `width` objects.
    pub fn new(width: usize, height: usize, cells: Vec<ObjectKind>) -> Result<Self> {
        if width < 3 || height < 3 {
            return Err(AtigError::input(format!(
                "grid must be at least 3x3, got {width}x{height}"
            )));
        }
        if cells.len() != width * height {
            return Err(AtigError::input(format!(
                "expected {} cells, got {}",
                width * height,
                cells.len()
            )));
        }
        let mut grid = GridMap {
            width,
            height,
            cells,
            start: None,
            slip: 0.0,
            labels: Vec::new(),
        };
        grid.labels = (0..width * height)
            .map(|s| grid.compute_label(grid.cell_of(s)))
            .collect();
        Ok(grid)
    }

    pub fn filled(width: usize, height: usize, kind: ObjectKind) -> Result<Self> {
        GridMap::new(width, height, vec![kind; width * height])
    }

    pub fn with_start(mut self, start: Option<Cell>) -> Result<Self> {
        if let Some(c) = start {
            self.check_cell(c)?;
        }
        self.start = start;
        Ok(self)
    }

    pub fn with_slip(mut self, slip: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&slip) {
            return Err(AtigError::input(format!("slip must lie in [0, 1], got {slip}")));
        }
        self.slip = slip;
        Ok(self)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_cells(&self) -> usize {
        self.width * self.height
    }

    pub fn start(&self) -> Option<Cell> {
        self.start
    }

    pub fn slip(&self) -> f64 {
        self.slip
    }

    pub fn contains(&self, c: Cell) -> bool {
        c.x < self.width && c.y < self.height
    }

    pub fn check_cell(&self, c: Cell) -> Result<()> {
        if self.contains(c) {
            Ok(())
        } else {
            Err(AtigError::input(format!(
                "cell {c} outside {}x{} grid",
                self.width, self.height
            )))
        }
    }

    pub fn index_of(&self, c: Cell) -> usize {
        c.y * self.width + c.x
    }

    pub fn cell_of(&self, s: usize) -> Cell {
        Cell::new(s % self.width, s / self.width)
    }

    pub fn object(&self, c: Cell) -> ObjectKind {
        self.cells[self.index_of(c)]
    }

    /// Object at a signed coordinate, `None` off the grid.
    pub fn object_at(&self, x: isize, y: isize) -> Option<ObjectKind> {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            None
        } else {
            Some(self.cells[y as usize * self.width + x as usize])
        }
    }

    pub fn set_object(&mut self, c: Cell, kind: ObjectKind) -> Result<()> {
        self.check_cell(c)?;
        let s = self.index_of(c);
        self.cells[s] = kind;
        // Only the 3x3 block around `c` can change label.
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                let (x, y) = (c.x as isize + dx, c.y as isize + dy);
                if self.object_at(x, y).is_some() {
                    let n = Cell::new(x as usize, y as usize);
                    let i = self.index_of(n);
                    self.labels[i] = self.compute_label(n);
                }
            }
        }
        Ok(())
    }

    fn compute_label(&self, c: Cell) -> Option<usize> {
        if c.x == 0 || c.y == 0 || c.x + 1 >= self.width || c.y + 1 >= self.height {
            return None;
        }
        let mut counts = [0usize; 6];
        for y in c.y - 1..=c.y + 1 {
            for x in c.x - 1..=c.x + 1 {
                counts[self.cells[y * self.width + x].index()] += 1;
            }
        }
        (0..NUM_REGION_TYPES).find(|&t| {
            let kind = ObjectKind::for_region(t).expect("region type in range");
            counts[kind.index()] >= REGION_THRESHOLD
        })
    }

    /// Region type of `c`: the full 3x3 neighborhood centered at `c` must hold
    /// at least seven copies of the defining object. Border cells are never
    /// labeled.
    pub fn region_label(&self, c: Cell) -> Result<Option<usize>> {
        self.check_cell(c)?;
        Ok(self.labels[self.index_of(c)])
    }

    /// Label by state index; panics on an out-of-range index.
    pub fn label(&self, s: usize) -> Option<usize> {
        self.labels[s]
    }

    /// All labeled cells with their types, in row-major order.
    pub fn labeled_cells(&self) -> Vec<(Cell, usize)> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(s, l)| l.map(|t| (self.cell_of(s), t)))
            .collect()
    }

    /// Region types that occur at least once.
    pub fn present_types(&self) -> Vec<usize> {
        let mut seen = [false; NUM_REGION_TYPES];
        for l in self.labels.iter().flatten() {
            seen[*l] = true;
        }
        (0..NUM_REGION_TYPES).filter(|&t| seen[t]).collect()
    }

    /// Deterministic successor of `s` under `a`; off-grid moves stay put.
    pub fn move_cell(&self, s: usize, a: Action) -> usize {
        let c = self.cell_of(s);
        let (dx, dy) = a.delta();
        let (x, y) = (c.x as isize + dx, c.y as isize + dy);
        if self.object_at(x, y).is_some() {
            y as usize * self.width + x as usize
        } else {
            s
        }
    }

    /// Successor distribution as `(state, probability)` pairs with distinct
    /// states. With probability `1 - slip` the chosen action is applied, with
    /// probability `slip` a uniformly drawn action is applied instead.
    pub fn step_distribution(&self, s: usize, a: Action) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(4);
        let mut push = |t: usize, p: f64| {
            if p <= 0.0 {
                return;
            }
            match out.iter_mut().find(|(u, _)| *u == t) {
                Some(e) => e.1 += p,
                None => out.push((t, p)),
            }
        };
        push(self.move_cell(s, a), 1.0 - self.slip);
        if self.slip > 0.0 {
            for b in Action::ALL {
                push(self.move_cell(s, b), self.slip / Action::COUNT as f64);
            }
        }
        out
    }

    /// Same as [`GridMap::step_distribution`] but addressed by cell.
    pub fn step_distribution_cell(&self, c: Cell, a: Action) -> Result<Vec<(Cell, f64)>> {
        self.check_cell(c)?;
        Ok(self
            .step_distribution(self.index_of(c), a)
            .into_iter()
            .map(|(s, p)| (self.cell_of(s), p))
            .collect())
    }

    /// Samples one successor.
    pub fn sample_step<R: rand::Rng + ?Sized>(&self, s: usize, a: Action, rng: &mut R) -> usize {
        if self.slip > 0.0 && rng.gen::<f64>() < self.slip {
            let b = Action::ALL[rng.gen_range(0..Action::COUNT)];
            self.move_cell(s, b)
        } else {
            self.move_cell(s, a)
        }
    }

    /// Initial state distribution: a point mass on `start` if set, otherwise
    /// uniform over unlabeled cells.
    pub fn initial_distribution(&self) -> Vec<(usize, f64)> {
        match self.start {
            Some(c) => vec![(self.index_of(c), 1.0)],
            None => {
                let free: Vec<usize> = (0..self.num_cells()).filter(|&s| self.labels[s].is_none()).collect();
                let p = 1.0 / free.len() as f64;
                free.into_iter().map(|s| (s, p)).collect()
            }
        }
    }

    pub fn sample_initial<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let dist = self.initial_distribution();
        if dist.len() == 1 {
            return dist[0].0;
        }
        dist[rng.gen_range(0..dist.len())].0
    }

    /// Labels emitted along a state sequence: one symbol for every state
    /// entered that is a region center, including the first state.
    pub fn emitted_labels(&self, states: &[Cell]) -> Result<Vec<usize>> {
        for &c in states {
            self.check_cell(c)?;
        }
        Ok(states.iter().filter_map(|&c| self.labels[self.index_of(c)]).collect())
    }

    /// [`GridMap::emitted_labels`] over state indices.
    pub fn emitted_labels_idx(&self, states: &[usize]) -> Vec<usize> {
        states.iter().filter_map(|&s| self.labels[s]).collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        GridMap::parse(&text, &path.display().to_string())
    }

    /// Parses the text format: a header `W H startX startY` (the start may be
    /// omitted), then `H` rows of `W` object codes.
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| AtigError::parse(source, 1, "empty environment file"))?;
        let nums: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| AtigError::parse(source, 1, format!("bad header: {e}")))?;
        let (w, h, start) = match nums.as_slice() {
            [w, h] => (*w, *h, None),
            [w, h, x, y] => (*w, *h, Some(Cell::new(*x, *y))),
            _ => return Err(AtigError::parse(source, 1, "header must be `W H startX startY`")),
        };
        let mut cells = Vec::with_capacity(w * h);
        for row in 0..h {
            let (no, line) = lines
                .next()
                .ok_or_else(|| AtigError::parse(source, row + 2, format!("missing grid row {row}")))?;
            let line = line.trim_end_matches('\r');
            if line.chars().count() != w {
                return Err(AtigError::parse(
                    source,
                    no + 1,
                    format!("row has {} cells, expected {w}", line.chars().count()),
                ));
            }
            for (col, ch) in line.chars().enumerate() {
                let kind = ObjectKind::from_code(ch).ok_or_else(|| {
                    AtigError::parse(source, no + 1, format!("unknown object code {ch:?} at column {col}"))
                })?;
                cells.push(kind);
            }
        }
        if let Some((no, extra)) = lines.find(|(_, l)| !l.trim().is_empty()) {
            return Err(AtigError::parse(source, no + 1, format!("trailing content {extra:?}")));
        }
        let grid = GridMap::new(w, h, cells).map_err(|e| AtigError::parse(source, 1, e.to_string()))?;
        grid.with_start(start)
            .map_err(|e| AtigError::parse(source, 1, e.to_string()))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity((self.width + 1) * (self.height + 1));
        match self.start {
            Some(c) => out.push_str(&format!("{} {} {} {}\n", self.width, self.height, c.x, c.y)),
            None => out.push_str(&format!("{} {}\n", self.width, self.height)),
        }
        for row in self.cells.chunks(self.width) {
            out.extend(row.iter().map(|k| k.code()));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }
}

impl fmt::Display for GridMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

/// Generates a grid with `regions_per_type` pure 3x3 blocks of each region
/// type. Blocks keep a one-cell gap to each other so no neighborhood can mix
/// two blocks into a spurious region. Remaining cells are grass or tile, and
/// the start is drawn among those filler cells.
pub fn generate_random_env(width: usize, height: usize, regions_per_type: usize, seed: u64) -> Result<GridMap> {
    if width < 3 || height < 3 {
        return Err(AtigError::input(format!(
            "grid must be at least 3x3, got {width}x{height}"
        )));
    }
    let mut rng = rng::seeded(seed);
    let blocks_needed = regions_per_type * NUM_REGION_TYPES;
    const RESTARTS: usize = 200;
    const TRIES_PER_BLOCK: usize = 500;

    'restart: for _ in 0..RESTARTS {
        // Top-left corners of placed blocks.
        let mut placed: Vec<(usize, usize)> = Vec::with_capacity(blocks_needed);
        for _ in 0..blocks_needed {
            let mut ok = false;
            for _ in 0..TRIES_PER_BLOCK {
                let x = rng.gen_range(0..=width - 3);
                let y = rng.gen_range(0..=height - 3);
                // Blocks must be separated by at least one cell in x or y.
                let clear = placed
                    .iter()
                    .all(|&(px, py)| x >= px + 4 || px >= x + 4 || y >= py + 4 || py >= y + 4);
                if clear {
                    placed.push((x, y));
                    ok = true;
                    break;
                }
            }
            if !ok {
                continue 'restart;
            }
        }

        let mut cells: Vec<ObjectKind> = (0..width * height)
            .map(|_| {
                if rng.gen_bool(0.5) {
                    ObjectKind::Grass
                } else {
                    ObjectKind::Tile
                }
            })
            .collect();
        let mut in_block = vec![false; width * height];
        for (i, &(bx, by)) in placed.iter().enumerate() {
            let kind = ObjectKind::for_region(i % NUM_REGION_TYPES).expect("type in range");
            for y in by..by + 3 {
                for x in bx..bx + 3 {
                    cells[y * width + x] = kind;
                    in_block[y * width + x] = true;
                }
            }
        }
        let free: Vec<usize> = (0..width * height).filter(|&s| !in_block[s]).collect();
        let start = free.choose(&mut rng).map(|&s| Cell::new(s % width, s / width));
        let grid = GridMap::new(width, height, cells)?.with_start(start)?;
        return Ok(grid);
    }
    Err(AtigError::Generation(format!(
        "could not place {blocks_needed} separated 3x3 blocks in a {width}x{height} grid"
    )))
}
