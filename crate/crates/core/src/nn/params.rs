//! Flat parameter storage with named, shaped slots.
//!
//! Every trainable tensor of a model lives in one contiguous vector. Layers
//! hold [`SlotId`]s into a shared [`ParamLayout`], which keeps the optimizer,
//! the checkpoint writer and the gradient checker oblivious to model structure.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotId(usize);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Slot {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParamLayout {
    slots: Vec<Slot>,
    total: usize,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, shape: &[usize]) -> SlotId {
        let len = shape.iter().product();
        let id = SlotId(self.slots.len());
        self.slots.push(Slot {
            name: name.into(),
            shape: shape.to_vec(),
            offset: self.total,
            len,
        });
        self.total += len;
        id
    }

    /// Total number of scalar parameters.
    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn slot(&self, id: SlotId) -> &Slot {
        &self.slots[id.0]
    }

    pub fn find(&self, name: &str) -> Option<&Slot> {
        self.slots.iter().find(|s| s.name == name)
    }

    pub fn get<'a, T>(&self, values: &'a [T], id: SlotId) -> &'a [T] {
        let s = &self.slots[id.0];
        &values[s.offset..s.offset + s.len]
    }

    pub fn get_mut<'a, T>(&self, values: &'a mut [T], id: SlotId) -> &'a mut [T] {
        let s = &self.slots[id.0];
        &mut values[s.offset..s.offset + s.len]
    }
}
