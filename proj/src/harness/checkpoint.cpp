#include "tar2/harness/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "tar2/common/error.hpp"

namespace tar2::harness {

namespace {

void put_u64(std::ostream& out, std::uint64_t v) {
  std::array<char, 8> b;
  for (int k = 0; k < 8; ++k) b[k] = static_cast<char>((v >> (8 * k)) & 0xff);
  out.write(b.data(), 8);
}

std::uint64_t get_u64(std::istream& in) {
  std::array<unsigned char, 8> b{};
  in.read(reinterpret_cast<char*>(b.data()), 8);
  if (!in) fail(Errc::state, "checkpoint: truncated array section");
  std::uint64_t v = 0;
  for (int k = 0; k < 8; ++k) v |= static_cast<std::uint64_t>(b[k]) << (8 * k);
  return v;
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

bool has_newline(const std::string& s) { return s.find('\n') != std::string::npos; }

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ExperimentConfig& cfg, std::uint64_t seed,
                     const StateDict& state) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  // Write to a sibling file and rename, so a crash never leaves a torn checkpoint.
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    require(out.good(), Errc::io, "checkpoint: cannot write " + tmp.string());
    out << "tar2-checkpoint\n";
    out << "format_version = " << kCheckpointVersion << "\n";
    out << "config_hash = " << hex(config_hash(cfg)) << "\n";
    out << "seed = " << seed << "\n";
    if (const auto it = state.meta.find("trainer.iteration"); it != state.meta.end())
      out << "iteration = " << it->second << "\n";
    for (const auto& [k, v] : state.meta) {
      require(!has_newline(k) && !has_newline(v) && k.find(' ') == std::string::npos, Errc::state,
              "checkpoint: metadata '" + k + "' cannot be stored on one line");
      out << "meta " << k << " = " << v << "\n";
    }
    std::istringstream text(to_text(cfg));
    for (std::string line; std::getline(text, line);) out << "config " << line << "\n";
    out << "arrays = " << state.arrays.size() << "\n";
    out << "end\n";
    for (const auto& [name, values] : state.arrays) {
      put_u64(out, name.size());
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      put_u64(out, values.size());
      for (double v : values) put_u64(out, std::bit_cast<std::uint64_t>(v));
    }
    out.flush();
    require(out.good(), Errc::io, "checkpoint: write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), Errc::io, "checkpoint: cannot open " + path.string());
  auto bad = [&](const std::string& what) { fail(Errc::state, "checkpoint " + path.string() + ": " + what); };
  std::string line;
  if (!std::getline(in, line) || line != "tar2-checkpoint") bad("not a checkpoint file");
  Checkpoint ck;
  std::string config_text;
  std::uint64_t version = 0, arrays = 0;
  bool have_hash = false, have_arrays = false, ended = false;
  while (std::getline(in, line)) {
    if (line == "end") {
      ended = true;
      break;
    }
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) bad("malformed header line '" + line + "'");
    const std::string key = line.substr(0, eq), value = line.substr(eq + 3);
    try {
      if (key == "format_version") version = std::stoull(value);
      else if (key == "config_hash") {
        ck.config_hash = std::stoull(value, nullptr, 16);
        have_hash = true;
      } else if (key == "seed") ck.seed = std::stoull(value);
      else if (key == "iteration") ck.iteration = std::stoull(value);
      else if (key == "arrays") {
        arrays = std::stoull(value);
        have_arrays = true;
      } else if (key.starts_with("meta ")) ck.state.meta[key.substr(5)] = value;
      else if (key.starts_with("config ")) config_text += key.substr(7) + " = " + value + "\n";
      else bad("unknown header key '" + key + "'");
    } catch (const std::logic_error&) {
      bad("bad value for '" + key + "'");
    }
  }
  if (!ended || !have_hash || !have_arrays) bad("incomplete header");
  if (version != kCheckpointVersion) bad("unsupported format version " + std::to_string(version));
  try {
    ck.config = parse_config(config_text, path.string() + " [embedded config]");
  } catch (const Error& e) {
    bad(e.what());
  }
  if (config_hash(ck.config) != ck.config_hash) bad("embedded config does not match its hash");
  for (std::uint64_t a = 0; a < arrays; ++a) {
    const std::uint64_t len = get_u64(in);
    if (len > 4096) bad("array name too long");
    std::string name(len, '\0');
    in.read(name.data(), static_cast<std::streamsize>(len));
    const std::uint64_t count = get_u64(in);
    std::vector<double> values(count);
    for (double& v : values) v = std::bit_cast<double>(get_u64(in));
    ck.state.arrays[std::move(name)] = std::move(values);
  }
  if (in.peek() != std::char_traits<char>::eof()) bad("trailing bytes after the last array");
  return ck;
}

Checkpoint read_checkpoint(const std::filesystem::path& path, const ExperimentConfig& expected, bool force) {
  Checkpoint ck = read_checkpoint(path);
  const std::uint64_t want = config_hash(expected);
  if (ck.config_hash != want && !force)
    fail(Errc::config, "checkpoint " + path.string() + " was written with config hash " + hex(ck.config_hash) +
                           ", current config hashes to " + hex(want) + " (use force to load anyway)");
  return ck;
}

std::unique_ptr<marl::Trainer> restore_trainer(const Checkpoint& ck, const ExperimentConfig* cfg) {
  marl::TrainerConfig tc = cfg ? cfg->trainer : ck.config.trainer;
  tc.seed = ck.seed;
  auto trainer = std::make_unique<marl::Trainer>(tc);
  trainer->load(ck.state);
  return trainer;
}

}  // namespace tar2::harness
