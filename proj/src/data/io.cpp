#include <fstream>
#include <sstream>
#include <stdexcept>

#include "ion/data/datasets.hpp"
#include "ion/degrade/ppm.hpp"

namespace ion::data {

namespace {
constexpr std::size_t kRecord = 1 + 3 * 1024;
}

std::vector<Sample> parse_cifar10_binary(const std::string& bytes) {
  if (bytes.size() % kRecord != 0)
    throw std::runtime_error("cifar10: size " + std::to_string(bytes.size()) +
                             " is not a multiple of " + std::to_string(kRecord) +
                             "; truncated record at offset " +
                             std::to_string(bytes.size() / kRecord * kRecord));
  std::vector<Sample> out;
  out.reserve(bytes.size() / kRecord);
  for (std::size_t r = 0; r * kRecord < bytes.size(); ++r) {
    const auto* rec = reinterpret_cast<const unsigned char*>(bytes.data() + r * kRecord);
    if (rec[0] > 9)
      throw std::runtime_error("cifar10: record " + std::to_string(r) + " has label " +
                               std::to_string(rec[0]) + " > 9");
    Sample s;
    s.image = Image(32, 32);
    s.target = {rec[0]};
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < 1024; ++i)
        s.image.pixels[i * 3 + c] = static_cast<float>(rec[1 + c * 1024 + i]) / 255.0f;
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<Sample> load_cifar10_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_cifar10_binary(ss.str());
}

void write_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples,
                   bool segmentation) {
  std::filesystem::create_directories(dir / "images");
  if (segmentation) std::filesystem::create_directories(dir / "labels");
  std::ofstream manifest(dir / "manifest.csv", std::ios::binary);
  if (!manifest) throw std::runtime_error("cannot write manifest in '" + dir.string() + "'");
  manifest << "index,domain,label,seed\r\n";
  char name[32];
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    std::snprintf(name, sizeof name, "%06zu", i);
    degrade::write_ppm(dir / "images" / (std::string(name) + ".ppm"), s.image);
    std::string label;
    if (segmentation) {
      label = "labels/" + std::string(name) + ".pgm";
      std::ofstream pgm(dir / label, std::ios::binary);
      pgm << "P5\n" << s.image.width << " " << s.image.height << "\n255\n";
      for (auto id : s.target) pgm.put(static_cast<char>(id));
    } else {
      label = std::to_string(s.label());
    }
    manifest << i << "," << s.domain << "," << label << "," << s.seed << "\r\n";
  }
}

}  // namespace ion::data
