#include "lp/config.hpp"

namespace lp {

std::string norm_kind_name(NormKind k) {
  return k == NormKind::kLayerNorm ? "layernorm" : "rmsnorm";
}

NormKind norm_kind_from_name(const std::string& name) {
  if (name == "rmsnorm") return NormKind::kRmsNorm;
  if (name == "layernorm") return NormKind::kLayerNorm;
  throw InputError("unknown norm kind '" + name + "' (expected rmsnorm or layernorm)");
}

}  // namespace lp
