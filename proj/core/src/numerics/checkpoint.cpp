#include "opd/numerics/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <sstream>

#include "opd/errors.hpp"

namespace opd {

static_assert(std::endian::native == std::endian::little,
              "checkpoint values are stored as little-endian doubles");

namespace {

void require_token(const std::string& s, const char* what) {
  if (s.empty() || s.find_first_of(" \t\r\n") != std::string::npos) {
    throw ValidationError(std::string("checkpoint ") + what + " '" + s + "' must be a non-empty token");
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParameterStore& params,
                     const CheckpointMeta& meta) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out << "opd-checkpoint 1\n";
  for (const auto& [k, v] : meta) {
    require_token(k, "meta key");
    require_token(v, "meta value");
    out << "meta " << k << ' ' << v << '\n';
  }
  for (const auto& p : params) {
    require_token(p.name, "parameter name");
    out << "param " << p.name << ' ' << p.value.rank();
    for (auto d : p.value.shape()) out << ' ' << d;
    out << '\n';
  }
  out << "end\n";
  for (const auto& p : params) {
    out.write(reinterpret_cast<const char*>(p.value.data()),
              static_cast<std::streamsize>(p.value.size() * sizeof(double)));
  }
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "opd-checkpoint 1") {
    throw ParseError(path.string() + ": not a checkpoint file");
  }
  Checkpoint ck;
  std::vector<std::pair<std::string, Shape>> layout;
  std::size_t line_no = 1;
  bool ended = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line == "end") {
      ended = true;
      break;
    }
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "meta") {
      std::string k, v;
      if (!(ls >> k >> v)) throw ParseError(path.string() + ":" + std::to_string(line_no) + ": bad meta line");
      ck.meta[k] = v;
    } else if (kind == "param") {
      std::string name;
      std::size_t rank = 0;
      if (!(ls >> name >> rank) || rank == 0) {
        throw ParseError(path.string() + ":" + std::to_string(line_no) + ": bad param line");
      }
      Shape shape(rank);
      for (auto& d : shape) {
        if (!(ls >> d) || d == 0) {
          throw ParseError(path.string() + ":" + std::to_string(line_no) + ": bad shape");
        }
      }
      layout.emplace_back(std::move(name), std::move(shape));
    } else {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": unexpected '" + kind + "'");
    }
  }
  if (!ended) throw ParseError(path.string() + ": manifest not terminated by 'end'");
  for (auto& [name, shape] : layout) {
    std::vector<double> values(element_count(shape));
    in.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(double)));
    if (!in) throw ParseError(path.string() + ": truncated values for '" + name + "'");
    ck.params.add(name, Tensor(shape, std::move(values)));
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw ParseError(path.string() + ": trailing bytes after parameter values");
  }
  return ck;
}

void assign_parameters(ParameterStore& target, const ParameterStore& source) {
  if (target.size() != source.size()) {
    throw ValidationError("checkpoint holds " + std::to_string(source.size()) +
                          " parameters, model expects " + std::to_string(target.size()));
  }
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (target[i].name != source[i].name || target[i].value.shape() != source[i].value.shape()) {
      throw ValidationError("checkpoint parameter '" + source[i].name + "' " +
                            to_string(source[i].value.shape()) + " does not match model parameter '" +
                            target[i].name + "' " + to_string(target[i].value.shape()));
    }
    const bool grad = target[i].value.requires_grad();
    target[i].value = source[i].value;
    target[i].value.set_requires_grad(grad);
  }
}

}  // namespace opd
