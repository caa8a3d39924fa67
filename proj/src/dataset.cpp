#include "ecgcmr/dataset.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "ecgcmr/error.hpp"
#include "ecgcmr/hash.hpp"

namespace ecgcmr::dataset {

using namespace ecgcmr::cohort;

static_assert(std::endian::native == std::endian::little, "dataset I/O assumes a little-endian host");

namespace {

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("missing " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

std::vector<std::int64_t> dims_of(const json& shapes, const std::string& file) {
  if (!shapes.contains(file)) throw FormatError("shapes.json has no entry for " + file);
  return shapes.at(file).get<std::vector<std::int64_t>>();
}

std::size_t numel(const std::vector<std::int64_t>& d) {
  std::size_t n = 1;
  for (auto v : d) n *= static_cast<std::size_t>(v);
  return n;
}

json sample_meta(const PairedSample& s) {
  json j;
  j["id"] = s.id;
  j["label"] = to_string(s.label);
  j["latent"] = {{"lvm_like", s.latent.lvm_like},
                 {"rvedv_like", s.latent.rvedv_like},
                 {"rhythm_rate", s.latent.rhythm_rate},
                 {"disease_class", to_string(s.latent.disease_class)},
                 {"noise_seed", s.latent.noise_seed}};
  json cov = {{"sex", s.covariates.sex}, {"age", s.covariates.age}, {"mean_heart_rate", s.covariates.mean_heart_rate}};
  for (const auto& [k, v] : s.covariates.extra) cov["extra"][k] = v;
  j["covariates"] = cov;
  j["qrs_windows"] = s.qrs_windows;
  j["sample_rate"] = s.ecg.sample_rate;
  return j;
}

}  // namespace

std::vector<const PairedSample*> Cohort::select(Split split) const {
  std::vector<const PairedSample*> out;
  for (int id : manifest.ids(split)) out.push_back(&samples.at(static_cast<std::size_t>(id)));
  return out;
}

json to_json(const GeneratorConfig& c) {
  return {{"ecg_length", c.ecg_length},
          {"sample_rate", c.sample_rate},
          {"frames", c.frames},
          {"image_size", c.image_size},
          {"phenotypes", c.phenotypes},
          {"sa_slices", c.sa_slices},
          {"rate_min", c.rate_min},
          {"rate_max", c.rate_max},
          {"qrs_amplitude", c.qrs_amplitude},
          {"wave_amplitude", c.wave_amplitude},
          {"baseline_amplitude", c.baseline_amplitude},
          {"ecg_noise", c.ecg_noise},
          {"image_noise", c.image_noise},
          {"center_jitter", c.center_jitter},
          {"thresholds",
           {{"hypertrophic_lvm", c.thresholds.hypertrophic_lvm},
            {"dilated_rvedv", c.thresholds.dilated_rvedv},
            {"restrictive_lvm", c.thresholds.restrictive_lvm},
            {"restrictive_rvedv", c.thresholds.restrictive_rvedv}}}};
}

GeneratorConfig generator_from_json(const json& j) {
  GeneratorConfig c;
  c.ecg_length = j.at("ecg_length").get<std::size_t>();
  c.sample_rate = j.at("sample_rate").get<double>();
  c.frames = j.at("frames").get<int>();
  c.image_size = j.at("image_size").get<int>();
  c.phenotypes = j.at("phenotypes").get<int>();
  c.sa_slices = j.at("sa_slices").get<int>();
  c.rate_min = j.at("rate_min").get<double>();
  c.rate_max = j.at("rate_max").get<double>();
  c.qrs_amplitude = j.at("qrs_amplitude").get<double>();
  c.wave_amplitude = j.at("wave_amplitude").get<double>();
  c.baseline_amplitude = j.at("baseline_amplitude").get<double>();
  c.ecg_noise = j.at("ecg_noise").get<double>();
  c.image_noise = j.at("image_noise").get<double>();
  c.center_jitter = j.at("center_jitter").get<double>();
  const auto& t = j.at("thresholds");
  c.thresholds.hypertrophic_lvm = t.at("hypertrophic_lvm").get<double>();
  c.thresholds.dilated_rvedv = t.at("dilated_rvedv").get<double>();
  c.thresholds.restrictive_lvm = t.at("restrictive_lvm").get<double>();
  c.thresholds.restrictive_rvedv = t.at("restrictive_rvedv").get<double>();
  return c;
}

json manifest_to_json(const CohortManifest& m) {
  json j;
  j["format_version"] = m.format_version;
  j["cohort_id"] = m.cohort_id;
  j["n_samples"] = m.n_samples;
  j["generator_seed"] = m.generator_seed;
  j["splits"] = {{"train", m.ids(Split::train)}, {"val", m.ids(Split::val)}, {"test", m.ids(Split::test)}};
  j["covariate_stats"] = {
      {"names", m.covariate_stats.names}, {"mean", m.covariate_stats.mean}, {"std", m.covariate_stats.stddev}};
  return j;
}

CohortManifest manifest_from_json(const json& j) {
  CohortManifest m;
  try {
    m.format_version = j.at("format_version").get<int>();
    m.cohort_id = j.at("cohort_id").get<std::string>();
    m.n_samples = j.at("n_samples").get<std::size_t>();
    m.generator_seed = j.at("generator_seed").get<std::uint64_t>();
    m.splits.assign(m.n_samples, Split::train);
    std::vector<int> seen(m.n_samples, 0);
    for (const auto& [name, split] : {std::pair{"train", Split::train}, {"val", Split::val}, {"test", Split::test}}) {
      for (int id : j.at("splits").at(name).get<std::vector<int>>()) {
        if (id < 0 || static_cast<std::size_t>(id) >= m.n_samples) throw FormatError("split id out of range");
        m.splits[static_cast<std::size_t>(id)] = split;
        ++seen[static_cast<std::size_t>(id)];
      }
    }
    for (int c : seen) {
      if (c != 1) throw FormatError("splits are not a disjoint, exhaustive partition");
    }
    const auto& cs = j.at("covariate_stats");
    m.covariate_stats.names = cs.at("names").get<std::vector<std::string>>();
    m.covariate_stats.mean = cs.at("mean").get<std::vector<double>>();
    m.covariate_stats.stddev = cs.at("std").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed cohort manifest: ") + e.what());
  }
  m.validate();
  return m;
}

std::string sample_file(int id, const std::string& field) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "s%06d_", id);
  return buf + field;
}

void write_f32(const fs::path& path, std::span<const float> values) {
  atomic_write(path, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(values.data()),
                                                    values.size_bytes()));
}

std::vector<float> read_f32(const fs::path& path, std::size_t expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("missing " + path.string());
  std::vector<float> v(expected);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(expected * sizeof(float)));
  if (static_cast<std::size_t>(in.gcount()) != expected * sizeof(float) || in.peek() != EOF) {
    throw FormatError(path.string() + " does not match its declared shape");
  }
  return v;
}

void write_u8(const fs::path& path, std::span<const std::uint8_t> values) { atomic_write(path, values); }

std::vector<std::uint8_t> read_u8(const fs::path& path, std::size_t expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("missing " + path.string());
  std::vector<std::uint8_t> v(expected);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(expected));
  if (static_cast<std::size_t>(in.gcount()) != expected || in.peek() != EOF) {
    throw FormatError(path.string() + " does not match its declared shape");
  }
  return v;
}

void write_cohort(const fs::path& dir, const Cohort& c) {
  if (fs::exists(dir)) throw ConfigError("output directory already exists: " + dir.string());
  fs::path tmp = dir;
  tmp += ".partial";
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  try {
    json shapes = json::object();
    json meta = json::array();
    auto put_f32 = [&](const std::string& file, std::span<const float> values, std::vector<std::int64_t> dims) {
      write_f32(tmp / file, values);
      shapes[file] = dims;
    };
    for (const auto& s : c.samples) {
      s.validate();
      std::vector<float> ecg(s.ecg.samples.begin(), s.ecg.samples.end());
      put_f32(sample_file(s.id, "ecg.f32"), ecg, {kLeads, static_cast<std::int64_t>(s.ecg.length)});
      put_f32(sample_file(s.id, "cmr_la.f32"), s.cmr_la.pixels, {s.cmr_la.frames, s.cmr_la.height, s.cmr_la.width});
      put_f32(sample_file(s.id, "cmr_sa.f32"), s.cmr_sa.pixels, {s.cmr_sa.frames, s.cmr_sa.height, s.cmr_sa.width});
      write_u8(tmp / sample_file(s.id, "mask_la.u8"), s.mask_la.data);
      shapes[sample_file(s.id, "mask_la.u8")] = {s.mask_la.height, s.mask_la.width};
      write_u8(tmp / sample_file(s.id, "mask_sa.u8"), s.mask_sa.data);
      shapes[sample_file(s.id, "mask_sa.u8")] = {s.mask_sa.height, s.mask_sa.width};
      std::vector<float> ph(s.phenotypes.begin(), s.phenotypes.end());
      put_f32(sample_file(s.id, "phenotypes.f32"), ph, {static_cast<std::int64_t>(ph.size())});
      if (s.sa_volume) {
        const auto& v = *s.sa_volume;
        put_f32(sample_file(s.id, "cmr_sa_volume.f32"), v.data, {v.height, v.width, v.slices, v.frames});
      }
      meta.push_back(sample_meta(s));
    }
    json manifest = manifest_to_json(c.manifest);
    manifest["info"] = c.info;
    atomic_write(tmp / kManifestFile, manifest.dump(2) + "\n");
    atomic_write(tmp / kShapesFile, shapes.dump(2) + "\n");
    atomic_write(tmp / kSamplesFile, meta.dump(2) + "\n");
    fs::rename(tmp, dir);
  } catch (...) {
    std::error_code ec;
    fs::remove_all(tmp, ec);
    throw;
  }
}

json read_manifest_json(const fs::path& dir) { return read_json(dir / kManifestFile); }

Cohort load_cohort(const fs::path& dir) {
  if (!fs::exists(dir / kManifestFile)) throw MissingPrerequisite("cohort manifest not found: " + (dir / kManifestFile).string());
  Cohort c;
  const json mj = read_json(dir / kManifestFile);
  c.manifest = manifest_from_json(mj);
  c.info = mj.value("info", json::object());
  const json shapes = read_json(dir / kShapesFile);
  const json meta = read_json(dir / kSamplesFile);
  if (meta.size() != c.manifest.n_samples) throw FormatError("samples.json does not match n_samples");
  c.samples.resize(c.manifest.n_samples);
  try {
    for (const auto& m : meta) {
      PairedSample s;
      s.id = m.at("id").get<int>();
      if (s.id < 0 || static_cast<std::size_t>(s.id) >= c.samples.size()) throw FormatError("sample id out of range");
      s.label = disease_from_string(m.at("label").get<std::string>());
      const auto& z = m.at("latent");
      s.latent.lvm_like = z.at("lvm_like").get<double>();
      s.latent.rvedv_like = z.at("rvedv_like").get<double>();
      s.latent.rhythm_rate = z.at("rhythm_rate").get<double>();
      s.latent.disease_class = disease_from_string(z.at("disease_class").get<std::string>());
      s.latent.noise_seed = z.at("noise_seed").get<std::uint64_t>();
      const auto& cv = m.at("covariates");
      s.covariates.sex = cv.at("sex").get<double>();
      s.covariates.age = cv.at("age").get<double>();
      s.covariates.mean_heart_rate = cv.at("mean_heart_rate").get<double>();
      if (cv.contains("extra")) s.covariates.extra = cv.at("extra").get<std::map<std::string, double>>();
      s.qrs_windows = m.at("qrs_windows").get<std::vector<std::pair<int, int>>>();

      const auto ecg_file = sample_file(s.id, "ecg.f32");
      const auto ecg_dims = dims_of(shapes, ecg_file);
      if (ecg_dims.size() != 2 || ecg_dims[0] != kLeads) throw FormatError(ecg_file + " must be 12 x L");
      const auto ecg = read_f32(dir / ecg_file, numel(ecg_dims));
      s.ecg = EcgRecord(static_cast<std::size_t>(ecg_dims[1]), m.at("sample_rate").get<double>());
      std::copy(ecg.begin(), ecg.end(), s.ecg.samples.begin());

      auto load_clip = [&](const std::string& field, View view) {
        const auto file = sample_file(s.id, field);
        const auto d = dims_of(shapes, file);
        if (d.size() != 3) throw FormatError(file + " must be T x H x W");
        CmrClip clip(static_cast<int>(d[0]), static_cast<int>(d[1]), static_cast<int>(d[2]), view);
        clip.pixels = read_f32(dir / file, numel(d));
        return clip;
      };
      auto load_mask = [&](const std::string& field, View view) {
        const auto file = sample_file(s.id, field);
        const auto d = dims_of(shapes, file);
        if (d.size() != 2) throw FormatError(file + " must be H x W");
        HeartMask mask(static_cast<int>(d[0]), static_cast<int>(d[1]), view);
        mask.data = read_u8(dir / file, numel(d));
        return mask;
      };
      s.cmr_la = load_clip("cmr_la.f32", View::long_axis);
      s.cmr_sa = load_clip("cmr_sa.f32", View::short_axis);
      s.mask_la = load_mask("mask_la.u8", View::long_axis);
      s.mask_sa = load_mask("mask_sa.u8", View::short_axis);
      const auto ph_file = sample_file(s.id, "phenotypes.f32");
      const auto ph = read_f32(dir / ph_file, numel(dims_of(shapes, ph_file)));
      s.phenotypes.assign(ph.begin(), ph.end());
      const auto vol_file = sample_file(s.id, "cmr_sa_volume.f32");
      if (shapes.contains(vol_file)) {
        const auto d = dims_of(shapes, vol_file);
        if (d.size() != 4) throw FormatError(vol_file + " must be H x W x S x T");
        CmrVolume v(static_cast<int>(d[0]), static_cast<int>(d[1]), static_cast<int>(d[2]), static_cast<int>(d[3]));
        v.data = read_f32(dir / vol_file, numel(d));
        s.sa_volume = std::move(v);
      }
      s.validate();
      c.samples[static_cast<std::size_t>(s.id)] = std::move(s);
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed samples.json: ") + e.what());
  }
  return c;
}

void write_clip(const fs::path& dir, const std::string& name, const CmrClip& clip) {
  fs::create_directories(dir);
  write_f32(dir / (name + ".f32"), clip.pixels);
  json shapes = json::object();
  if (fs::exists(dir / kShapesFile)) shapes = read_json(dir / kShapesFile);
  shapes[name + ".f32"] = {clip.frames, clip.height, clip.width};
  atomic_write(dir / kShapesFile, shapes.dump(2) + "\n");
}

CmrClip read_clip(const fs::path& dir, const std::string& name, View view) {
  const json shapes = read_json(dir / kShapesFile);
  const auto d = dims_of(shapes, name + ".f32");
  if (d.size() != 3) throw FormatError(name + " must be T x H x W");
  CmrClip clip(static_cast<int>(d[0]), static_cast<int>(d[1]), static_cast<int>(d[2]), view);
  clip.pixels = read_f32(dir / (name + ".f32"), numel(d));
  return clip;
}

}  // namespace ecgcmr::dataset
