#ifndef MRDIS_PNG_IMPORT_HPP
#define MRDIS_PNG_IMPORT_HPP

// Directory-of-PNG importer. Needs libpng at link time; the rest of the
// library does not.

#include <png.h>

#include <algorithm>
#include <filesystem>
#include <string>
#include <vector>

#include "mrdis/data.hpp"
#include "mrdis/image.hpp"

namespace mrdis {

/// Decodes a PNG into CHW RGB values in [0, 1].
inline Tensor<double> read_png(const std::filesystem::path& path) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    const auto bytes = read_file(path);
    require(png_image_begin_read_from_memory(&img, bytes.data(), bytes.size()) != 0, "bad_image",
            path.string() + ": " + img.message);
    img.format = PNG_FORMAT_RGB;
    std::vector<std::uint8_t> px(PNG_IMAGE_SIZE(img));
    if (png_image_finish_read(&img, nullptr, px.data(), 0, nullptr) == 0) {
        const std::string msg = img.message;
        png_image_free(&img);
        throw Error("bad_image", path.string() + ": " + msg);
    }
    const std::size_t h = img.height, w = img.width;
    Tensor<double> out({3, h, w});
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < 3; ++c) out[(c * h + y) * w + x] = px[(y * w + x) * 3 + c] / 255.0;
    return out;
}

struct PngImport {
    Dataset data;
    std::vector<std::string> class_names;
};

/// One class per subdirectory of `root` (sorted by name), images sorted by
/// file name. Every image is center-cropped to a square and resized to
/// `size` x `size`.
inline PngImport import_png_directory(const std::filesystem::path& root, std::size_t size) {
    namespace fs = std::filesystem;
    require(fs::is_directory(root), "missing_file", root.string() + " is not a directory");
    require(size >= 1 && size <= 65535, "bad_config", "import size out of range");
    PngImport out;
    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(root))
        if (e.is_directory()) dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());
    require(!dirs.empty(), "bad_dataset", "no class subdirectories under " + root.string());
    require(dirs.size() <= 65535, "bad_dataset", "too many classes");
    out.data.header = {0, static_cast<std::uint16_t>(size), static_cast<std::uint16_t>(size), 3,
                       static_cast<std::uint16_t>(dirs.size()), 0};
    for (std::size_t c = 0; c < dirs.size(); ++c) {
        out.class_names.push_back(dirs[c].filename().string());
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(dirs[c])) {
            auto ext = e.path().extension().string();
            std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
            if (e.is_regular_file() && ext == ".png") files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            const auto img = read_png(f);
            const std::size_t h = img.extent(1), w = img.extent(2), side = std::min(h, w);
            const auto square = crop(img, (w - side) / 2, (h - side) / 2, side, side);
            out.data.append(static_cast<std::uint16_t>(c), to_bytes(resize_bilinear(square, size, size)));
        }
    }
    require(out.data.size() > 0, "bad_dataset", "no PNG images found under " + root.string());
    validate(out.data);
    return out;
}

}  // namespace mrdis

#endif
