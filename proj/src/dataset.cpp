#include "parsec/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include "parsec/rng.hpp"

namespace parsec {

const double kCifarChannelMean[3] = {0.4914, 0.4822, 0.4465};
const double kCifarChannelStd[3] = {0.2470, 0.2435, 0.2616};

namespace {

constexpr int kRecordBytes = 3073;
constexpr int kRecordsPerFile = 10000;
constexpr std::int64_t kFileBytes = static_cast<std::int64_t>(kRecordBytes) * kRecordsPerFile;
constexpr int kPixelsPerImage = 3 * 32 * 32;

std::vector<std::uint8_t> read_exact_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dataset file '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (static_cast<std::int64_t>(bytes.size()) != kFileBytes)
    throw std::runtime_error("dataset file '" + path + "' holds " + std::to_string(bytes.size()) +
                             " bytes, expected exactly " + std::to_string(kFileBytes));
  return bytes;
}

// Decodes selected records (already validated byte buffers, one per file) into
// a normalized image tensor + labels.
void decode_records(const std::vector<const std::vector<std::uint8_t>*>& files,
                    const std::vector<int>& record_ids, const std::vector<std::string>& names,
                    Tensor& images, std::vector<int>& labels) {
  const int n = static_cast<int>(record_ids.size());
  images = Tensor::zeros({n, 3, 32, 32});
  labels.resize(static_cast<std::size_t>(n));
  for (int r = 0; r < n; ++r) {
    const int global = record_ids[static_cast<std::size_t>(r)];
    const int file_idx = global / kRecordsPerFile;
    const int local = global % kRecordsPerFile;
    const std::uint8_t* rec = files[static_cast<std::size_t>(file_idx)]->data() +
                              static_cast<std::ptrdiff_t>(local) * kRecordBytes;
    const int label = rec[0];
    if (label > 9)
      throw std::runtime_error("dataset file '" + names[static_cast<std::size_t>(file_idx)] +
                               "' record " + std::to_string(local) + " has label byte " +
                               std::to_string(label) + " (must be 0..9)");
    labels[static_cast<std::size_t>(r)] = label;
    for (int c = 0; c < 3; ++c) {
      const std::uint8_t* plane = rec + 1 + c * 32 * 32;
      const double mean = kCifarChannelMean[c], stddev = kCifarChannelStd[c];
      for (int i = 0; i < 32 * 32; ++i)
        images.data((static_cast<std::ptrdiff_t>(r) * 3 + c) * 1024 + i) =
            (plane[i] / 255.0 - mean) / stddev;
    }
  }
}

}  // namespace

std::vector<int> subsample_indices(int n, int count, std::uint64_t seed) {
  if (count < 1 || count > n)
    throw std::invalid_argument("subsample of " + std::to_string(count) + " from " +
                                std::to_string(n) + " examples is impossible");
  std::vector<int> pool(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) pool[static_cast<std::size_t>(i)] = i;
  Rng rng(seed);
  std::vector<int> picked(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const std::size_t j = static_cast<std::size_t>(i) +
                          static_cast<std::size_t>(rng.uniform_index(static_cast<std::uint64_t>(n - i)));
    std::swap(pool[static_cast<std::size_t>(i)], pool[j]);
    picked[static_cast<std::size_t>(i)] = pool[static_cast<std::size_t>(i)];
  }
  return picked;
}

DatasetHandle load_cifar10(const std::string& dir, int train_subset, int test_subset,
                           std::uint64_t subset_seed) {
  const std::vector<std::string> train_names = {"data_batch_1.bin", "data_batch_2.bin",
                                                "data_batch_3.bin", "data_batch_4.bin",
                                                "data_batch_5.bin"};
  std::vector<std::vector<std::uint8_t>> train_bytes;
  std::vector<std::string> train_paths;
  for (const auto& name : train_names) {
    const std::string path = dir + "/" + name;
    train_bytes.push_back(read_exact_file(path));
    train_paths.push_back(path);
  }
  const std::string test_path = dir + "/test_batch.bin";
  const std::vector<std::uint8_t> test_bytes = read_exact_file(test_path);

  DatasetHandle data;
  data.kind = "cifar10-binary";
  data.num_classes = 10;
  data.channels = 3;
  data.height = 32;
  data.width = 32;

  const int total_train = kRecordsPerFile * static_cast<int>(train_names.size());
  std::vector<int> train_ids;
  if (train_subset > 0) {
    train_ids = subsample_indices(total_train, train_subset, derive_seed(subset_seed, "dataset.subset.train"));
  } else {
    train_ids.resize(static_cast<std::size_t>(total_train));
    for (int i = 0; i < total_train; ++i) train_ids[static_cast<std::size_t>(i)] = i;
  }
  std::vector<const std::vector<std::uint8_t>*> train_ptrs;
  for (const auto& b : train_bytes) train_ptrs.push_back(&b);
  decode_records(train_ptrs, train_ids, train_paths, data.train_images, data.train_labels);

  std::vector<int> test_ids;
  if (test_subset > 0) {
    test_ids = subsample_indices(kRecordsPerFile, test_subset, derive_seed(subset_seed, "dataset.subset.test"));
  } else {
    test_ids.resize(kRecordsPerFile);
    for (int i = 0; i < kRecordsPerFile; ++i) test_ids[static_cast<std::size_t>(i)] = i;
  }
  decode_records({&test_bytes}, test_ids, {test_path}, data.test_images, data.test_labels);
  return data;
}

void write_cifar10_file(const std::string& path, const std::vector<std::uint8_t>& labels,
                        const std::vector<std::uint8_t>& pixels) {
  if (labels.size() != kRecordsPerFile)
    throw std::invalid_argument("cifar writer: need exactly " + std::to_string(kRecordsPerFile) +
                                " labels, got " + std::to_string(labels.size()));
  if (pixels.size() != static_cast<std::size_t>(kRecordsPerFile) * kPixelsPerImage)
    throw std::invalid_argument("cifar writer: need exactly " +
                                std::to_string(static_cast<std::int64_t>(kRecordsPerFile) * kPixelsPerImage) +
                                " pixel bytes, got " + std::to_string(pixels.size()));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  for (int r = 0; r < kRecordsPerFile; ++r) {
    if (labels[static_cast<std::size_t>(r)] > 9)
      throw std::invalid_argument("cifar writer: record " + std::to_string(r) + " label " +
                                  std::to_string(labels[static_cast<std::size_t>(r)]) + " > 9");
    out.put(static_cast<char>(labels[static_cast<std::size_t>(r)]));
    out.write(reinterpret_cast<const char*>(pixels.data()) +
                  static_cast<std::ptrdiff_t>(r) * kPixelsPerImage,
              kPixelsPerImage);
  }
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

namespace {

// Byte-valued image for the stand-in writer: four vertical stripes of
// oriented gratings, with phase drawn per stripe. Each class repeats one of
// three orientations twice; which one repeats is readable from globally
// averaged statistics and splits the classes into three coarse groups, but
// resolving the class inside a group takes the left-to-right stripe order,
// which only spatial cross-channel filtering can read — smoothing or
// passthrough tops out at the group level.
void texture_image_bytes(int cls, int num_classes, double separation, Rng& rng, std::uint8_t* dst) {
  (void)num_classes;
  static const int kArrangements[10][4] = {
      {0, 0, 1, 2}, {0, 1, 2, 0}, {1, 0, 0, 2}, {2, 0, 1, 0},  // first orientation repeats
      {1, 1, 0, 2}, {1, 0, 2, 1}, {0, 2, 1, 1},                // second repeats
      {2, 2, 0, 1}, {2, 0, 1, 2}, {0, 1, 2, 2}};               // third repeats
  const int* arrangement = kArrangements[cls % 10];
  const double freq = 2.0 * std::numbers::pi * 9.0 / 32.0;
  double fx[4], fy[4], phase[4];
  for (int s = 0; s < 4; ++s) {
    const double theta = std::numbers::pi * arrangement[s] / 3.0 +
                         rng.normal(0.0, std::numbers::pi / 45.0);
    fx[s] = freq * std::cos(theta);
    fy[s] = freq * std::sin(theta);
    phase[s] = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }
  for (int c = 0; c < 3; ++c) {
    const double chan_gain = 1.0 - 0.15 * c;
    for (int y = 0; y < 32; ++y) {
      for (int x = 0; x < 32; ++x) {
        const int s = x / 8;
        const double signal =
            std::sin(fx[s] * x + fy[s] * y + phase[s]) * 0.25 * separation * chan_gain;
        const double noise = rng.normal(0.0, 0.10);
        const double v = std::clamp(0.5 + signal + noise, 0.0, 1.0);
        dst[(c * 32 + y) * 32 + x] = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
    }
  }
}

}  // namespace

DatasetHandle gen_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  if (spec.num_classes < 2)
    throw std::invalid_argument("synthetic dataset needs at least 2 classes, got " +
                                std::to_string(spec.num_classes));
  if (spec.kind != "texture" && spec.kind != "gaussian")
    throw std::invalid_argument("unknown synthetic kind '" + spec.kind +
                                "' (expected \"texture\" or \"gaussian\")");
  if (spec.num_train < 1 || spec.num_test < 1 || spec.channels < 1 || spec.height < 1 || spec.width < 1)
    throw std::invalid_argument("synthetic dataset: counts and extents must be positive");

  DatasetHandle data;
  data.kind = "synthetic";
  data.num_classes = spec.num_classes;
  data.channels = spec.channels;
  data.height = spec.height;
  data.width = spec.width;

  // Class mean patterns (gaussian kind) are shared between train and test.
  Rng class_rng = derive_rng(seed, "synthetic.classes");
  std::vector<Eigen::ArrayXd> class_means;
  const std::ptrdiff_t image_elems =
      static_cast<std::ptrdiff_t>(spec.channels) * spec.height * spec.width;
  if (spec.kind == "gaussian") {
    for (int c = 0; c < spec.num_classes; ++c) {
      Eigen::ArrayXd m(image_elems);
      for (std::ptrdiff_t i = 0; i < image_elems; ++i) m(i) = class_rng.normal();
      m *= spec.separation / std::sqrt(static_cast<double>(image_elems));
      class_means.push_back(std::move(m));
    }
  }

  const auto fill_split = [&](const char* split, int count, Tensor& images, std::vector<int>& labels) {
    Rng rng = derive_rng(seed, std::string("synthetic.") + split);
    images = Tensor::zeros({count, spec.channels, spec.height, spec.width});
    labels.resize(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
      const int cls = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(spec.num_classes)));
      labels[static_cast<std::size_t>(i)] = cls;
      auto img = images.data.segment(static_cast<std::ptrdiff_t>(i) * image_elems, image_elems);
      if (spec.kind == "gaussian") {
        for (std::ptrdiff_t e = 0; e < image_elems; ++e)
          img(e) = class_means[static_cast<std::size_t>(cls)](e) + rng.normal();
      } else {
        const double theta = std::numbers::pi * cls / spec.num_classes;
        const double freq = 2.0 * std::numbers::pi * (2.0 + cls % 3) / spec.width;
        const double fx = freq * std::cos(theta), fy = freq * std::sin(theta);
        const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
        for (int c = 0; c < spec.channels; ++c) {
          const double chan_gain = 1.0 - 0.15 * (c % 3);
          for (int y = 0; y < spec.height; ++y)
            for (int x = 0; x < spec.width; ++x)
              img((static_cast<std::ptrdiff_t>(c) * spec.height + y) * spec.width + x) =
                  spec.separation * chan_gain * std::sin(fx * x + fy * y + phase) +
                  rng.normal(0.0, 0.25);
        }
      }
    }
  };
  fill_split("train", spec.num_train, data.train_images, data.train_labels);
  fill_split("test", spec.num_test, data.test_images, data.test_labels);
  return data;
}

std::string write_standin_cifar10(const std::string& dir, std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  const std::vector<std::string> names = {"data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin",
                                          "data_batch_4.bin", "data_batch_5.bin", "test_batch.bin"};
  for (std::size_t f = 0; f < names.size(); ++f) {
    Rng rng = derive_rng(seed, "standin." + names[f]);
    std::vector<std::uint8_t> labels(kRecordsPerFile);
    std::vector<std::uint8_t> pixels(static_cast<std::size_t>(kRecordsPerFile) * kPixelsPerImage);
    for (int r = 0; r < kRecordsPerFile; ++r) {
      const int cls = static_cast<int>(rng.uniform_index(10));
      labels[static_cast<std::size_t>(r)] = static_cast<std::uint8_t>(cls);
      texture_image_bytes(cls, 10, 1.0, rng,
                          pixels.data() + static_cast<std::ptrdiff_t>(r) * kPixelsPerImage);
    }
    write_cifar10_file(dir + "/" + names[f], labels, pixels);
  }
  return dir;
}

}  // namespace parsec
