use crate::corpus::{ProcessExample, TopicGroup};

/// One group seen from the point of view of one labeled member.
///
/// `members` holds the labeled examples followed by the unlabeled ones, in
/// file order; `members[primary_index]` supplies the supervised loss and every
/// other member is compared against it for consistency.
#[derive(Clone, Debug)]
pub struct LaceBatch<'a> {
    pub group: &'a TopicGroup,
    pub primary_index: usize,
    pub members: Vec<&'a ProcessExample>,
}

impl<'a> LaceBatch<'a> {
    pub fn primary(&self) -> &'a ProcessExample {
        self.members[self.primary_index]
    }

    pub fn others(&self) -> impl Iterator<Item = &'a ProcessExample> + '_ {
        self.members
            .iter()
            .enumerate()
            .filter(move |(i, _)| *i != self.primary_index)
            .map(|(_, ex)| *ex)
    }
}

/// One batch per labeled member. A group with no labeled member yields no
/// batches.
pub fn make_batches(group: &TopicGroup) -> Vec<LaceBatch<'_>> {
    let members: Vec<&ProcessExample> = group.members().collect();
    (0..group.labeled.len())
        .map(|primary_index| LaceBatch {
            group,
            primary_index,
            members: members.clone(),
        })
        .collect()
}
