import CNNLayoutEngine.utils
import CNNLayoutEngine.tensor
import CNNLayoutEngine.layout
import CNNLayoutEngine.layers
import CNNLayoutEngine.layout_selection
import CNNLayoutEngine.net
import CNNLayoutEngine.bench
import CNNLayoutEngine.config
