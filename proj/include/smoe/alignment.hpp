#pragma once

#include "smoe/assignment.hpp"
#include "smoe/model.hpp"

namespace smoe {

// Hidden-unit permutation aligning E to E_ref: the assignment maximizing
// <w_in_ref, P w_in>_F + <w_out_ref, w_out P^T>_F, solved on the score
// matrix w_in_ref * w_in^T + w_out_ref^T * w_out.
Permutation weight_matching(const ExpertWeights& e, const ExpertWeights& e_ref);

// Rows of w_in and columns of w_out reordered by p. Function-preserving.
ExpertWeights permute_expert(const ExpertWeights& e, const Permutation& p);

// Every expert aligned to the reference slot (default 0), which stays
// untouched. Requires dense storage and a bijective redirect table.
SmoeLayer align_layer(const SmoeLayer& layer, int reference_slot = 0);

}  // namespace smoe
