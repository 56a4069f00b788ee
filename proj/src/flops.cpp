#include "sodar/flops.hpp"

#include <sstream>
#include <stdexcept>

namespace sodar {

std::vector<int64_t> aggregation_layer_macs(const AggArchitecture& arch, int64_t height, int64_t width) {
  const auto ch = arch.channels();
  std::vector<int64_t> macs;
  for (size_t l = 0; l + 1 < ch.size(); ++l) {
    macs.push_back(ch[l] * ch[l + 1] * arch.kernel * arch.kernel * height * width);
  }
  return macs;
}

std::vector<LevelFlops> flops_mask_head(const GridConfig& grids, const AggregationConfig& agg,
                                        const MaskHeadShape& shape) {
  grids.validate();
  int64_t per_cell = 0;
  if (shape.aggregate) {
    for (int64_t m : aggregation_layer_macs(agg.architecture(), shape.height, shape.width)) per_cell += m;
  }
  std::vector<LevelFlops> out;
  for (const auto& lv : grids.levels) {
    LevelFlops f{lv};
    f.representation = shape.head_in_channels * lv.mask_grid * lv.mask_grid * shape.head_kernel * shape.head_kernel *
                       shape.height * shape.width;
    const int64_t cells = shape.evaluated_cells.value_or(lv.grid * lv.grid);
    f.aggregation = cells * per_cell;
    out.push_back(f);
  }
  return out;
}

std::string flops_table_csv(const std::vector<LevelFlops>& base, const std::vector<LevelFlops>& variant) {
  if (base.size() != variant.size()) throw std::invalid_argument("flops tables have different level counts");
  std::ostringstream os;
  os.precision(10);
  os << "level,G,G_mask_base,G_mask,representation_base,representation,aggregation_base,aggregation,"
        "total_base,total,representation_ratio,total_ratio\n";
  for (size_t l = 0; l < base.size(); ++l) {
    const auto& b = base[l];
    const auto& v = variant[l];
    os << l << ',' << v.level.grid << ',' << b.level.mask_grid << ',' << v.level.mask_grid << ',' << b.representation
       << ',' << v.representation << ',' << b.aggregation << ',' << v.aggregation << ',' << b.total() << ','
       << v.total() << ',' << static_cast<double>(v.representation) / static_cast<double>(b.representation) << ','
       << static_cast<double>(v.total()) / static_cast<double>(b.total()) << '\n';
  }
  return os.str();
}

}  // namespace sodar
